mod common;

use std::path::Path;

use common::*;
use eee_core::pipeline::{
    run_all, select_top, stage_evaluate, stage_exploit, stage_explore, stage_sample, EEEConfig,
    PipelineError, Stage, StageReport, Study, REPORT_FILE,
};

fn smoke_config(dir: &Path, workers: usize) -> EEEConfig {
    let inst = random_instance(77, 8);
    let path = dir.join("rand8.tsp");
    write_tsplib(&path, &inst);
    let mut cfg = EEEConfig::case_study(&path);
    cfg.optimum = held_karp(&inst.distance_matrix()) as f64;
    cfg.apply_smoke();
    cfg.engine.workers = workers;
    cfg.out = dir.join("out");
    cfg
}

fn report(out: &Path, stage: Stage) -> StageReport {
    StageReport::load(&out.join(stage.dir_name()).join(REPORT_FILE)).unwrap()
}

#[test]
fn stages_compose_through_their_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let study = Study::new(smoke_config(dir.path(), 1)).unwrap();
    let summary = run_all(&study).unwrap();
    let out = &study.config.out;
    assert_eq!(summary.stages_completed.len(), 3);

    let exploration = report(out, Stage::Exploration);
    let exploitation = report(out, Stage::Exploitation);
    let evaluation = report(out, Stage::Evaluation);
    assert_eq!(exploration.rows.len(), 12);

    let top = select_top(&exploration, study.config.top_p).unwrap();
    let exploited: Vec<_> = exploitation.rows.iter().map(|r| r.tuple).collect();
    assert_eq!(exploited, top);

    for row in &evaluation.rows {
        let source = exploitation.row(row.tuple.index).unwrap();
        let Some(ev) = &row.evaluation else { continue };
        assert_eq!(Some(ev.family), source.winner);
        assert!((0.0..=1.0).contains(&ev.mean_p));
        assert!(ev.ci_low <= ev.ci_high);
        assert!(ev.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }
    for row in exploitation.rows.iter().filter(|r| r.status.is_ok()) {
        assert_eq!(row.runs.len(), 5);
        assert!(row
            .runs
            .iter()
            .all(|r| r.best_length as f64 >= study.config.optimum));
    }
}

#[test]
fn output_does_not_depend_on_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(&Study::new(smoke_config(a.path(), 1)).unwrap()).unwrap();
    run_all(&Study::new(smoke_config(b.path(), 4)).unwrap()).unwrap();
    let ta = tree(&a.path().join("out"));
    let tb = tree(&b.path().join("out"));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{k} differs");
    }
}

#[test]
fn a_stage_can_be_rerun_from_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let study = Study::new(smoke_config(dir.path(), 1)).unwrap();
    run_all(&study).unwrap();
    let path = study.config.out.join("evaluation").join(REPORT_FILE);
    let before = std::fs::read(&path).unwrap();
    stage_evaluate(&study).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn stages_report_missing_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let study = Study::new(smoke_config(dir.path(), 1)).unwrap();
    assert!(matches!(
        stage_explore(&study, None),
        Err(PipelineError::MissingInput { .. })
    ));
    stage_sample(&study).unwrap();
    assert!(matches!(
        stage_exploit(&study),
        Err(PipelineError::MissingInput { .. })
    ));
    assert!(matches!(
        stage_evaluate(&study),
        Err(PipelineError::MissingInput { .. })
    ));
}

#[test]
fn persisted_pheromones_leave_results_unchanged() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let plain = Study::new(smoke_config(a.path(), 1)).unwrap();
    let mut cfg = smoke_config(b.path(), 1);
    cfg.persist_pheromones = true;
    let persisted = Study::new(cfg).unwrap();
    let tuples = plain.sample().unwrap();
    let x = plain.run_exploration(&tuples).unwrap();
    let y = persisted.run_exploration(&tuples).unwrap();
    assert_eq!(x.rows, y.rows);
    assert!(b.path().join("out/exploration/pheromones").is_dir());
}

#[test]
fn missing_instance_is_reported() {
    let mut cfg = EEEConfig::case_study("/nonexistent/x.tsp");
    cfg.apply_smoke();
    assert!(matches!(
        Study::new(cfg),
        Err(PipelineError::MissingInput { .. })
    ));
}
