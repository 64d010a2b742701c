use std::collections::HashMap;

use slash_core::attnops::{budget, AttentionTensor};
use slash_core::calib::*;
use slash_core::graphtext::TokenAdjacency;
use slash_core::headscan::{select_heads, SelectionResult};
use slash_core::synthmodel::{generate, GeneratorSpec};

fn items(seeds: &[u64]) -> (Vec<CalibrationItem>, SelectionResult) {
    let items: Vec<CalibrationItem> = seeds
        .iter()
        .map(|&s| {
            let spec = GeneratorSpec::default_for_seed(s);
            CalibrationItem {
                tensor: generate(&spec).unwrap(),
                adjacency: spec.adjacency().unwrap(),
            }
        })
        .collect();
    let sel = select_heads(&items[0].tensor, &items[0].adjacency).unwrap();
    (items, sel)
}

fn selected_sink(t: &AttentionTensor, adj: &TokenAdjacency, sel: &SelectionResult) -> f64 {
    let s: f64 = sel
        .selected_heads
        .iter()
        .map(|&(l, h)| budget(t.map(l, h), adj).unwrap().sink_fraction)
        .sum();
    s / sel.selected_heads.len() as f64
}

/// Scores how close the selected heads' sink mass is to 30% of where it started.
fn peaked_at_point_three(items: &[CalibrationItem], sel: &SelectionResult) -> impl Objective {
    let start: HashMap<String, f64> = items
        .iter()
        .map(|it| (it.tensor.meta.label.clone(), selected_sink(&it.tensor, &it.adjacency, sel)))
        .collect();
    move |t: &AttentionTensor, adj: &TokenAdjacency, sel: &SelectionResult| {
        let target = 0.3 * start[&t.meta.label];
        Ok(-(selected_sink(t, adj, sel) - target).powi(2))
    }
}

#[test]
fn peaked_objective_peaks_at_point_three_on_a_fine_grid() {
    let (items, sel) = items(&[0, 1]);
    let objective = peaked_at_point_three(&items, &sel);
    let fine = CalibrationSpec {
        gamma_grid: (0..=100).map(|i| i as f64 / 100.0).collect(),
        objective: ObjectiveKind::AdjacencyF1,
        granularity: Granularity::Head,
    };
    let r = calibrate_with(&fine, &items, &sel, &objective).unwrap();
    assert_eq!(r.best_gamma, 0.3);
    assert_eq!(r.per_gamma.len(), 101);

    let coarse = CalibrationSpec {
        granularity: Granularity::Head,
        ..CalibrationSpec::default()
    };
    assert_eq!(calibrate_with(&coarse, &items, &sel, &objective).unwrap().best_gamma, 0.3);
}

#[test]
fn constant_objective_prefers_the_largest_gamma() {
    let (items, sel) = items(&[3]);
    let constant = |_: &AttentionTensor, _: &TokenAdjacency, _: &SelectionResult| Ok(0.5);
    let r = calibrate_with(&CalibrationSpec::default(), &items, &sel, &constant).unwrap();
    assert_eq!(r.best_gamma, 1.0);
    assert!(r.per_gamma.iter().all(|g| g.mean_score == 0.5));
}

#[test]
fn unit_grid_reproduces_the_unsharpened_score() {
    let (items, sel) = items(&[4, 5]);
    let spec = CalibrationSpec {
        gamma_grid: vec![1.0],
        ..CalibrationSpec::default()
    };
    let r = calibrate(&spec, &items, &sel).unwrap();
    for (it, &score) in items.iter().zip(&r.per_gamma[0].per_item) {
        let base = slash_core::synthmodel::downstream_probe(&it.tensor, &it.adjacency, &sel).unwrap();
        assert_eq!(score, base.f1);
    }
}

#[test]
fn best_gamma_never_scores_below_the_baseline() {
    let (items, sel) = items(&[6, 7]);
    let r = calibrate(&CalibrationSpec::default(), &items, &sel).unwrap();
    let base = r.per_gamma.iter().find(|g| g.gamma == 1.0).unwrap().mean_score;
    let best = r.per_gamma.iter().find(|g| g.gamma == r.best_gamma).unwrap().mean_score;
    assert!(best >= base);
}

#[test]
fn bad_inputs_are_rejected() {
    let (items, sel) = items(&[0]);
    let mut spec = CalibrationSpec::default();
    spec.gamma_grid = vec![];
    assert!(calibrate(&spec, &items, &sel).is_err());
    spec.gamma_grid = vec![0.5, 0.4];
    assert!(calibrate(&spec, &items, &sel).is_err());
    assert!(calibrate(&CalibrationSpec::default(), &[], &sel).is_err());
    let empty = SelectionResult {
        selected_heads: Default::default(),
        selected_layers: Default::default(),
        ..sel.clone()
    };
    assert!(calibrate(&CalibrationSpec::default(), &items, &empty).is_err());
}

#[cfg(unix)]
#[test]
fn custom_command_receives_a_readable_tensor() {
    let (items, sel) = items(&[2]);
    // prints 1 when the tensor file starts with the SLSH magic
    let script = r#"head -c 4 "$1" | grep -q SLSH && echo 1 || echo 0"#;
    let spec = CalibrationSpec {
        gamma_grid: vec![0.5, 1.0],
        objective: ObjectiveKind::Custom {
            command: vec!["sh".into(), "-c".into(), script.into(), "scorer".into()],
        },
        granularity: Granularity::Layer,
    };
    let r = calibrate(&spec, &items, &sel).unwrap();
    assert!(r.per_gamma.iter().all(|g| g.mean_score == 1.0));
    assert_eq!(r.best_gamma, 1.0);

    let failing = CalibrationSpec {
        objective: ObjectiveKind::Custom {
            command: vec!["sh".into(), "-c".into(), "exit 3".into()],
        },
        ..spec.clone()
    };
    assert!(calibrate(&failing, &items, &sel).is_err());
    let garbage = CalibrationSpec {
        objective: ObjectiveKind::Custom {
            command: vec!["sh".into(), "-c".into(), "echo nope".into()],
        },
        ..spec
    };
    assert!(calibrate(&garbage, &items, &sel).is_err());
}
