//! The injected deduplicating log helper.
//!
//! The class keeps a concurrent set of already-logged messages. `log`
//! performs an atomic test-and-insert (`Set.add` on a set backed by
//! `ConcurrentHashMap`) and only writes a log record when the insert
//! succeeded.

use crate::app::App;
use crate::ir::SmaliClass;
use crate::literal::quote_smali_string;
use crate::parser::parse_class;

pub const DEFAULT_LOGCHECKER: &str = "Lcom/androlog/LogChecker;";

const MARKER_FIELD: &str = "LOGGED:Ljava/util/Set;";
const TWO_ARG_LOG: &str = "(Ljava/lang/String;Ljava/lang/String;)V";

/// Build the log-checker class for `identifier` under `descriptor`.
pub fn synthesize_logchecker(identifier: &str, descriptor: &str) -> SmaliClass {
    let tag = quote_smali_string(identifier);
    let src = format!(
        r#".class public final {d}
.super Ljava/lang/Object;
.source "LogChecker.java"

.field private static final {marker}

.method static constructor <clinit>()V
    .locals 1
    new-instance v0, Ljava/util/concurrent/ConcurrentHashMap;
    invoke-direct {{v0}}, Ljava/util/concurrent/ConcurrentHashMap;-><init>()V
    invoke-static {{v0}}, Ljava/util/Collections;->newSetFromMap(Ljava/util/Map;)Ljava/util/Set;
    move-result-object v0
    sput-object v0, {d}->{marker}
    return-void
.end method

.method private constructor <init>()V
    .locals 0
    invoke-direct {{p0}}, Ljava/lang/Object;-><init>()V
    return-void
.end method

.method public static log(Ljava/lang/String;Ljava/lang/String;)V
    .locals 1
    sget-object v0, {d}->{marker}
    invoke-interface {{v0, p0}}, Ljava/util/Set;->add(Ljava/lang/Object;)Z
    move-result v0
    if-eqz v0, :already_logged
    invoke-static {{p1, p0}}, Landroid/util/Log;->i(Ljava/lang/String;Ljava/lang/String;)I
    :already_logged
    return-void
.end method

.method public static log(Ljava/lang/String;)V
    .locals 1
    const-string v0, {tag}
    invoke-static {{p0, v0}}, {d}->log(Ljava/lang/String;Ljava/lang/String;)V
    return-void
.end method
"#,
        d = descriptor,
        marker = MARKER_FIELD,
    );
    parse_class(&src)
        .expect("synthesized log checker is valid smali")
        .class
}

/// Whether `class` is a log checker produced by [`synthesize_logchecker`].
pub fn is_logchecker(class: &SmaliClass) -> bool {
    class.fields_raw.iter().any(|f| f.contains(MARKER_FIELD))
        && class.method("log", TWO_ARG_LOG).is_some()
        && class.method("log", "(Ljava/lang/String;)V").is_some()
}

/// Descriptor of a log checker already present in `app`.
pub fn find_logchecker(app: &App) -> Option<String> {
    app.iter()
        .find(|c| is_logchecker(c))
        .map(|c| c.descriptor.clone())
}

/// First free descriptor: the default, then numbered variants.
pub fn choose_descriptor(app: &App) -> String {
    if app.class(DEFAULT_LOGCHECKER).is_none() {
        return DEFAULT_LOGCHECKER.to_string();
    }
    let stem = DEFAULT_LOGCHECKER.trim_end_matches(';');
    (1..)
        .map(|n| format!("{stem}{n};"))
        .find(|d| app.class(d).is_none())
        .expect("unbounded search")
}

/// Behavioural model of the injected helper, used to reason about what a
/// device would print.
#[derive(Debug, Default)]
pub struct LogCheckerModel {
    logged: std::sync::Mutex<std::collections::HashSet<String>>,
    records: std::sync::Mutex<Vec<(String, String)>>,
}

impl LogCheckerModel {
    pub fn log(&self, message: &str, tag: &str) {
        let first = self.logged.lock().unwrap().insert(message.to_string());
        if first {
            self.records
                .lock()
                .unwrap()
                .push((tag.to_string(), message.to_string()));
        }
    }

    pub fn records(&self) -> Vec<(String, String)> {
        self.records.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::print_class;

    #[test]
    fn synthesized_class_shape() {
        let c = synthesize_logchecker("ANDROLOG", DEFAULT_LOGCHECKER);
        assert_eq!(c.descriptor, DEFAULT_LOGCHECKER);
        assert!(is_logchecker(&c));
        let text = print_class(&c);
        assert!(text.contains("Ljava/util/Set;->add(Ljava/lang/Object;)Z"));
        assert!(text.contains("const-string v0, \"ANDROLOG\""));
        assert!(text.contains("Landroid/util/Log;->i("));
        let reparsed = parse_class(&text).unwrap().class;
        assert_eq!(reparsed, c);
    }

    #[test]
    fn plain_class_is_not_a_logchecker() {
        let c = SmaliClass::new(DEFAULT_LOGCHECKER, "Ljava/lang/Object;");
        assert!(!is_logchecker(&c));
    }

    #[test]
    fn collision_picks_numbered_name() {
        let mut app = App::new("x");
        assert_eq!(choose_descriptor(&app), DEFAULT_LOGCHECKER);
        app.insert("a.smali", SmaliClass::new(DEFAULT_LOGCHECKER, "Ljava/lang/Object;"))
            .unwrap();
        assert_eq!(choose_descriptor(&app), "Lcom/androlog/LogChecker1;");
    }

    #[test]
    fn model_logs_once_per_message() {
        let m = LogCheckerModel::default();
        m.log("X", "ANDROLOG");
        m.log("X", "ANDROLOG");
        m.log("Y", "ANDROLOG");
        assert_eq!(
            m.records(),
            vec![
                ("ANDROLOG".to_string(), "X".to_string()),
                ("ANDROLOG".to_string(), "Y".to_string())
            ]
        );
    }

    #[test]
    fn model_is_atomic_under_threads() {
        let m = std::sync::Arc::new(LogCheckerModel::default());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let m = m.clone();
                std::thread::spawn(move || {
                    for i in 0..200 {
                        m.log(&format!("M{}", i % 50), "T");
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(m.records().len(), 50);
    }
}
