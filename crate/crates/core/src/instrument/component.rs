use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::app::App;
use crate::error::{Error, Result};
use crate::ir::{ProbeKind, SmaliClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Activity,
    Service,
    BroadcastReceiver,
    ContentProvider,
}

impl ComponentKind {
    pub fn probe_kind(self) -> ProbeKind {
        match self {
            ComponentKind::Activity => ProbeKind::Activity,
            ComponentKind::Service => ProbeKind::Service,
            ComponentKind::BroadcastReceiver => ProbeKind::Receiver,
            ComponentKind::ContentProvider => ProbeKind::Provider,
        }
    }

    /// Framework entry points that receive a component probe.
    pub fn lifecycle_methods(self) -> &'static [&'static str] {
        match self {
            ComponentKind::Activity => &[
                "onCreate", "onStart", "onResume", "onPause", "onStop", "onRestart", "onDestroy",
            ],
            ComponentKind::Service => &["onCreate", "onStartCommand", "onBind", "onDestroy"],
            ComponentKind::BroadcastReceiver => &["onReceive"],
            ComponentKind::ContentProvider => &["onCreate", "query", "insert", "update", "delete"],
        }
    }

    pub fn is_lifecycle(self, method_name: &str) -> bool {
        self.lifecycle_methods().contains(&method_name)
    }
}

/// Known component base classes, framework and support libraries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseList(pub BTreeMap<String, ComponentKind>);

impl Default for BaseList {
    fn default() -> Self {
        use ComponentKind::*;
        let entries = [
            ("Landroid/app/Activity;", Activity),
            ("Landroid/app/ListActivity;", Activity),
            ("Landroid/app/NativeActivity;", Activity),
            ("Landroid/app/ExpandableListActivity;", Activity),
            ("Landroid/accounts/AccountAuthenticatorActivity;", Activity),
            ("Landroid/preference/PreferenceActivity;", Activity),
            ("Landroidx/activity/ComponentActivity;", Activity),
            ("Landroidx/core/app/ComponentActivity;", Activity),
            ("Landroidx/fragment/app/FragmentActivity;", Activity),
            ("Landroidx/appcompat/app/AppCompatActivity;", Activity),
            ("Landroid/support/v4/app/FragmentActivity;", Activity),
            ("Landroid/support/v7/app/AppCompatActivity;", Activity),
            ("Landroid/app/Service;", Service),
            ("Landroid/app/IntentService;", Service),
            ("Landroid/app/job/JobService;", Service),
            ("Landroid/service/notification/NotificationListenerService;", Service),
            ("Landroid/accessibilityservice/AccessibilityService;", Service),
            ("Landroid/inputmethodservice/InputMethodService;", Service),
            ("Landroidx/core/app/JobIntentService;", Service),
            ("Landroidx/lifecycle/LifecycleService;", Service),
            ("Landroid/content/BroadcastReceiver;", BroadcastReceiver),
            ("Landroid/appwidget/AppWidgetProvider;", BroadcastReceiver),
            ("Landroidx/legacy/content/WakefulBroadcastReceiver;", BroadcastReceiver),
            ("Landroid/support/v4/content/WakefulBroadcastReceiver;", BroadcastReceiver),
            ("Landroid/content/ContentProvider;", ContentProvider),
            ("Landroid/content/SearchRecentSuggestionsProvider;", ContentProvider),
            ("Landroidx/core/content/FileProvider;", ContentProvider),
            ("Landroid/support/v4/content/FileProvider;", ContentProvider),
        ];
        BaseList(
            entries
                .into_iter()
                .map(|(d, k)| (d.to_string(), k))
                .collect(),
        )
    }
}

/// Walk the superclass chain through app classes until a known base is hit
/// or the chain leaves the app.
pub fn detect_component_kind(
    class: &SmaliClass,
    app: &App,
    bases: &BaseList,
) -> Result<Option<ComponentKind>> {
    let mut seen = HashSet::new();
    seen.insert(class.descriptor.as_str());
    let mut current = class.super_descriptor.as_deref();
    while let Some(desc) = current {
        if let Some(kind) = bases.0.get(desc) {
            return Ok(Some(*kind));
        }
        let Some(parent) = app.class(desc) else {
            return Ok(None);
        };
        if !seen.insert(desc) {
            return Err(Error::CyclicHierarchy(class.descriptor.clone()));
        }
        current = parent.super_descriptor.as_deref();
    }
    Ok(None)
}
