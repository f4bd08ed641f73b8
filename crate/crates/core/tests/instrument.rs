mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use smalicov::coverage::summarize_app;
use smalicov::instrument::{
    component_kinds, find_logchecker, instrument_app, is_logchecker, probe_at, BaseList,
    ComponentKind, Granularity, InstrumentationConfig,
};
use smalicov::ir::{BodyKind, ProbeKind};
use smalicov::parser::print_class;
use smalicov::Error;

use common::*;

fn summary_ids(app: &smalicov::App, cfg: &InstrumentationConfig) -> BTreeSet<String> {
    summarize_app(app, cfg)
        .unwrap()
        .kinds
        .into_values()
        .flatten()
        .collect()
}

#[test]
fn summary_matches_injected_payloads_for_every_granularity_subset() {
    for (name, app) in corpus_apps() {
        for mask in 1u8..16 {
            for exclude in [false, true] {
                let gs = Granularity::ALL
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, g)| g);
                let mut cfg = InstrumentationConfig::with_granularities(gs);
                cfg.exclude_libraries = exclude;
                let (inst, report) = instrument_app(&app, &cfg).unwrap();
                let injected = injected_payloads(&inst);
                assert_eq!(summary_ids(&app, &cfg), injected, "{name} {:?}", cfg.granularities);
                let counted: usize = report.probes_inserted.values().sum();
                assert!(counted >= injected.len(), "{name}: entry probes repeat per constructor");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn summary_matches_for_random_configs(seed in any::<u64>()) {
        let apps = corpus_apps();
        let mut rng = StdRng::seed_from_u64(seed);
        let app = random_app(&mut rng, &apps);
        let cfg = random_config(&mut rng);
        let (inst, _) = instrument_app(&app, &cfg).unwrap();
        prop_assert_eq!(summary_ids(&app, &cfg), injected_payloads(&inst));
    }
}

#[test]
fn fixture_totals_match_independent_count() {
    let app = corpus_app("fixture");
    let summary = summarize_app(&app, &InstrumentationConfig::default()).unwrap();
    let totals: Vec<(ProbeKind, usize)> = summary
        .kinds
        .iter()
        .filter(|(_, ids)| !ids.is_empty())
        .map(|(k, ids)| (*k, ids.len()))
        .collect();
    assert_eq!(
        totals,
        vec![
            (ProbeKind::Class, 2),
            (ProbeKind::Method, 6),
            (ProbeKind::Statement, 25),
            (ProbeKind::Activity, 1)
        ]
    );

    let text = count_tree(&corpus_dir().join("fixture"));
    assert_eq!(text.classes, 3);
    assert_eq!(text.classes_with_ctor, summary.total(ProbeKind::Class));
    assert_eq!(text.methods - text.bodiless_methods, summary.total(ProbeKind::Method));
    assert_eq!(text.statements, summary.total(ProbeKind::Statement));
    assert_eq!(summary.skipped.get(&ProbeKind::Method), Some(&1));
    assert_eq!(summary.skipped.get(&ProbeKind::Class), Some(&1));
}

#[test]
fn empty_app_has_zero_totals() {
    let summary = summarize_app(&smalicov::App::new("empty"), &InstrumentationConfig::default()).unwrap();
    assert!(summary.kinds.values().all(|ids| ids.is_empty()));
}

#[test]
fn components_are_detected_through_app_superclasses() {
    let app = corpus_app("app1");
    let kinds = component_kinds(&app, &BaseList::default()).unwrap();
    let get = |d: &str| kinds.get(&format!("Lcom/example/app1/{d};")).copied();
    assert_eq!(get("MainActivity"), Some(ComponentKind::Activity));
    assert_eq!(get("SyncService"), Some(ComponentKind::Service));
    assert_eq!(get("BaseService"), Some(ComponentKind::Service));
    assert_eq!(get("BootReceiver"), Some(ComponentKind::BroadcastReceiver));
    assert_eq!(get("NotesProvider"), Some(ComponentKind::ContentProvider));
    assert_eq!(get("App"), None);
    assert_eq!(get("Calculator"), None);
}

#[test]
fn lifecycle_probes_name_the_component() {
    let app = corpus_app("app1");
    let (inst, report) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    let payloads = injected_payloads(&inst);
    assert!(payloads.contains("ACTIVITY=Lcom/example/app1/MainActivity;"));
    assert!(payloads.contains("SERVICE=Lcom/example/app1/SyncService;"));
    assert!(payloads.contains("BROADCASTRECEIVER=Lcom/example/app1/BootReceiver;"));
    assert!(payloads.contains("CONTENTPROVIDER=Lcom/example/app1/NotesProvider;"));
    // onCreate, onResume and onDestroy of the activity each carry the probe.
    assert_eq!(report.probes_inserted[&ProbeKind::Activity], 3);
    // getType is not a lifecycle method.
    let provider = inst.class("Lcom/example/app1/NotesProvider;").unwrap();
    let get_type = provider.methods.iter().find(|m| m.name == "getType").unwrap();
    assert!(!get_type.body.iter().any(|i| i.text.contains("CONTENTPROVIDER=")));
}

#[test]
fn entry_probes_come_first_in_class_method_component_order() {
    let app = corpus_app("fixture");
    let (inst, _) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    let lc = find_logchecker(&inst).unwrap();
    let activity = inst.class("Lcom/example/fixture/MainActivity;").unwrap();
    let on_create = activity.methods.iter().find(|m| m.name == "onCreate").unwrap();
    let first = on_create.body.iter().position(|i| i.kind == BodyKind::Instruction).unwrap();
    let a = probe_at(&on_create.body, first, &lc).unwrap();
    let b = probe_at(&on_create.body, first + 2, &lc).unwrap();
    assert_eq!(a.kind, Some(ProbeKind::Method));
    assert_eq!(b.kind, Some(ProbeKind::Activity));
    let init = activity.methods.iter().find(|m| m.name == "<init>").unwrap();
    let first = init.body.iter().position(|i| i.kind == BodyKind::Instruction).unwrap();
    assert_eq!(probe_at(&init.body, first, &lc).unwrap().kind, Some(ProbeKind::Class));
    assert_eq!(probe_at(&init.body, first + 2, &lc).unwrap().kind, Some(ProbeKind::Method));
}

#[test]
fn statement_probes_keep_move_result_adjacent() {
    let app = corpus_app("app1");
    let (inst, _) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    for class in inst.iter() {
        for m in &class.methods {
            let code: Vec<&str> = m
                .body
                .iter()
                .filter(|i| matches!(i.kind, BodyKind::Instruction | BodyKind::Label))
                .map(|i| i.text.as_str())
                .collect();
            for (i, t) in code.iter().enumerate() {
                if t.starts_with("move-result") {
                    let prev = code[i - 1];
                    assert!(
                        prev.starts_with("invoke-") || prev.starts_with("filled-new-array"),
                        "{}: `{prev}` before `{t}`",
                        class.method_id(m)
                    );
                    assert!(!prev.contains("->log(Ljava/lang/String;)V"));
                }
            }
        }
    }
}

#[test]
fn terminators_and_branches_log_before_executing() {
    let app = corpus_app("fixture");
    let (inst, _) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    let utils = inst.class("Lcom/example/fixture/Utils;").unwrap();
    let clamp = utils.methods.iter().find(|m| m.name == "clamp").unwrap();
    let text: Vec<&str> = clamp.body.iter().map(|i| i.text.as_str()).collect();
    for (i, t) in text.iter().enumerate() {
        if t.starts_with("return") || t.starts_with("if-") {
            let before = text[i - 2];
            assert!(before.starts_with("const-string") && before.contains("STATEMENT="), "{t}");
        }
    }
}

#[test]
fn raw_parameter_references_shift_with_the_frame() {
    let app = corpus_app("app1");
    let (inst, _) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    let rp = inst.class("Lcom/example/app1/RawParams;").unwrap();
    let scaled = rp.methods.iter().find(|m| m.name == "scaled").unwrap();
    let printed = print_class(rp);
    assert!(printed.contains(".registers 5"), "{printed}");
    assert_eq!(scaled.probe_register, Some(2));
    assert!(scaled.body.iter().any(|i| i.text == "iget v0, v3, Lcom/example/app1/RawParams;->value:I"));
    assert!(scaled.body.iter().any(|i| i.text == "mul-int/2addr v0, v4"));
    // payloads quote the original text
    assert!(injected_payloads(&inst).iter().any(|p| p.contains("|mul-int/2addr v0, v3|1")));
}

#[test]
fn ineligible_methods_are_reported_and_left_alone() {
    let app = corpus_app("app1");
    let (inst, report) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    let big = app.class("Lcom/example/app1/BigFrame;").unwrap();
    let big_after = inst.class("Lcom/example/app1/BigFrame;").unwrap();
    let huge = |c: &smalicov::SmaliClass| c.methods.iter().find(|m| m.name == "huge").unwrap().clone();
    assert_eq!(huge(big), huge(big_after));
    let reasons: Vec<&str> = report
        .classes_skipped
        .iter()
        .filter(|s| s.method.as_deref().is_some_and(|m| m.contains("huge")))
        .map(|s| s.reason.as_str())
        .collect();
    assert!(!reasons.is_empty());
    assert!(report
        .classes_skipped
        .iter()
        .any(|s| s.reason.contains("straddles") && s.method.as_deref().unwrap().contains("forward")));
}

#[test]
fn second_instrumentation_is_refused() {
    let app = corpus_app("single");
    let (inst, _) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    assert!(matches!(
        instrument_app(&inst, &InstrumentationConfig::default()),
        Err(Error::AlreadyInstrumented(_))
    ));
    assert!(matches!(
        summarize_app(&inst, &InstrumentationConfig::default()),
        Err(Error::AlreadyInstrumented(_))
    ));
}

#[test]
fn existing_class_with_checker_name_gets_a_fresh_name() {
    let app = corpus_app("collision");
    let (inst, report) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    assert_eq!(report.logchecker_descriptor, "Lcom/androlog/LogChecker1;");
    assert!(!is_logchecker(inst.class("Lcom/androlog/LogChecker;").unwrap()));
    assert!(is_logchecker(inst.class("Lcom/androlog/LogChecker1;").unwrap()));
    assert!(injected_payloads(&inst).contains("METHOD=Lcom/androlog/LogChecker;->check(Z)V"));
}

#[test]
fn library_exclusion_leaves_library_classes_untouched() {
    let app = corpus_app("app1");
    let mut cfg = InstrumentationConfig {
        exclude_libraries: true,
        ..InstrumentationConfig::default()
    };
    let (inst, report) = instrument_app(&app, &cfg).unwrap();
    let lib = "Landroidx/core/util/Preconditions;";
    assert_eq!(inst.class(lib), app.class(lib));
    assert!(report.classes_skipped.iter().any(|s| s.class == lib && s.reason.contains("library")));
    let is_lib_unit = |p: &String| p.split_once('=').is_some_and(|(_, id)| id.starts_with(lib));
    assert!(!summary_ids(&app, &cfg).iter().any(is_lib_unit));
    cfg.exclude_libraries = false;
    assert!(summary_ids(&app, &cfg).iter().any(is_lib_unit));
}

#[test]
fn checker_lands_in_the_smali_directory_of_apktool_trees() {
    let app = corpus_app("fixture");
    let (inst, report) = instrument_app(&app, &InstrumentationConfig::default()).unwrap();
    let entry = &inst.classes[&report.logchecker_descriptor];
    assert_eq!(entry.path, std::path::Path::new("smali/com/androlog/LogChecker.smali"));
}

#[test]
fn identifier_is_validated() {
    let app = corpus_app("single");
    for bad in ["", "has space", "a:b", "x(1)"] {
        let cfg = InstrumentationConfig {
            identifier: bad.into(),
            ..InstrumentationConfig::default()
        };
        assert!(matches!(instrument_app(&app, &cfg), Err(Error::InvalidConfig(_))), "{bad:?}");
    }
    let cfg = InstrumentationConfig::with_granularities([]);
    assert!(matches!(instrument_app(&app, &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn cyclic_hierarchy_is_an_error() {
    let mut app = smalicov::App::new("cycle");
    app.insert("A.smali", smalicov::SmaliClass::new("LA;", "LB;")).unwrap();
    app.insert("B.smali", smalicov::SmaliClass::new("LB;", "LA;")).unwrap();
    assert!(matches!(
        instrument_app(&app, &InstrumentationConfig::default()),
        Err(Error::CyclicHierarchy(_))
    ));
    let cfg = InstrumentationConfig::with_granularities([Granularity::Methods]);
    assert!(instrument_app(&app, &cfg).is_ok());
}

#[test]
fn instrumentation_is_deterministic() {
    let app = corpus_app("app1");
    let cfg = InstrumentationConfig::default();
    let (a, ra) = instrument_app(&app, &cfg).unwrap();
    let (b, rb) = instrument_app(&app, &cfg).unwrap();
    assert_eq!(ra, rb);
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(print_class(x), print_class(y));
    }
}
