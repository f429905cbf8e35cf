use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use aeos_core::campaign::{
    begin_experiment, plan, run_iteration, CampaignState, CampaignStatus, ControlAction, ExperimentRecord,
    ExperimentStatus, PlanOutcome, PlanRequest, PlannerConfig, StopCriteria,
};
use aeos_core::clock::ManualClock;
use aeos_core::journal::{ExperimentQuery, ExportFormat, JOURNAL_FILE};
use aeos_core::service::{Core, CoreConfig, CoreError};
use aeos_core::sim::{lab_campaign, register_sim_lab};
use aeos_core::wire::{from_data, parse};

fn config(dir: &std::path::Path) -> CoreConfig {
    CoreConfig {
        data_dir: Some(dir.to_path_buf()),
        sweep_period: None,
        wall_clock: Arc::new(ManualClock::ticking(1_700_000_000_000, 3)),
        ..CoreConfig::default()
    }
}

fn lab_core(dir: &std::path::Path) -> Core {
    let core = Core::open(config(dir)).unwrap();
    register_sim_lab(core.registry(), 0).unwrap();
    core
}

fn budget(n: u64) -> StopCriteria {
    StopCriteria { max_experiments: Some(n), ..Default::default() }
}

/// Runs `k` experiments synchronously, then begins one more and "crashes".
fn run_then_crash(core: &Core, id: &str, k: usize) -> CampaignState {
    let engine = core.engine();
    let mut st = core.campaign_state(id).unwrap();
    aeos_core::campaign::control(&mut st, ControlAction::Start, engine, None).unwrap();
    for _ in 0..k {
        run_iteration(&mut st, engine).unwrap();
    }
    let PlanOutcome::Proposal { params, planner_state, .. } = plan(&PlanRequest::of(&st), engine.registry.as_ref())
    else {
        panic!("planner stopped early")
    };
    begin_experiment(&mut st, params, planner_state, engine).unwrap();
    st
}

#[test]
fn crash_mid_experiment_recovers_paused() {
    let dir = tempfile::tempdir().unwrap();
    let core = lab_core(dir.path());
    let (created, _) = core.create_campaign(lab_campaign("crash", 5, PlannerConfig::Grid, budget(10))).unwrap();
    let id = created.campaign_id.clone();
    let before = run_then_crash(&core, &id, 4);
    drop(core);

    let core = lab_core(dir.path());
    assert!(core.recovery_warnings().iter().any(|w| w.contains(&id)));
    let st = core.campaign_state(&id).unwrap();
    assert_eq!(st.status, CampaignStatus::Paused);
    assert_eq!(st.experiments.len(), 5);
    assert_eq!(st.experiments[..4], before.experiments[..4]);
    let last = &st.experiments[4];
    assert_eq!(last.status, ExperimentStatus::Failed);
    assert_eq!(last.error.as_deref(), Some("interrupted"));

    // The recovery itself is journaled, so a second reopen needs none.
    drop(core);
    let core = lab_core(dir.path());
    assert!(core.recovery_warnings().is_empty());
    assert_eq!(core.campaign_state(&id).unwrap(), st);

    core.control(&id, ControlAction::Resume).unwrap();
    let h = core.campaign(&id).unwrap();
    assert!(h.wait_until(Duration::from_secs(10), |s| s.status.is_terminal()));
    let done = h.snapshot();
    assert_eq!(done.status, CampaignStatus::Completed);
    assert_eq!(done.experiments.len(), 10);
    for (i, r) in done.experiments.iter().enumerate() {
        assert_eq!(r.index, i as u64);
    }
    // The grid cursor survived: no point was proposed twice.
    let mut pts: Vec<_> =
        done.experiments.iter().map(|r| aeos_core::wire::canonical_string(&r.params.clone().into()).unwrap()).collect();
    pts.sort();
    pts.dedup();
    assert_eq!(pts.len(), 10);
}

#[test]
fn campaign_ids_continue_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let core = lab_core(dir.path());
    let (a, _) = core.create_campaign(lab_campaign("a", 3, PlannerConfig::Grid, budget(1))).unwrap();
    drop(core);
    let core = lab_core(dir.path());
    let (b, _) = core.create_campaign(lab_campaign("b", 3, PlannerConfig::Grid, budget(1))).unwrap();
    assert_eq!(a.campaign_id, "c-1");
    assert_eq!(b.campaign_id, "c-2");
    let mut spec = lab_campaign("dup", 3, PlannerConfig::Grid, budget(1));
    spec.campaign_id = Some("c-1".into());
    assert!(matches!(core.create_campaign(spec), Err(CoreError::DuplicateCampaign(id)) if id == "c-1"));
}

#[test]
fn torn_tail_is_dropped_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let core = lab_core(dir.path());
    let (c, _) = core.create_campaign(lab_campaign("t", 3, PlannerConfig::Grid, budget(2))).unwrap();
    let head = core.journal().head();
    drop(core);
    let mut f = OpenOptions::new().append(true).open(dir.path().join(JOURNAL_FILE)).unwrap();
    f.write_all(b"{\"body\":{\"campaign_id\":\"c-1\",").unwrap();
    drop(f);
    let core = lab_core(dir.path());
    assert!(!core.recovery_warnings().is_empty());
    assert_eq!(core.campaign_state(&c.campaign_id).unwrap().status, CampaignStatus::Draft);
    // Reopening registered the lab again, which appended after the old head.
    assert!(core.journal().head() > head);
    assert_eq!(core.journal().entries()[head as usize].seq, head + 1);
}

#[test]
fn corrupt_middle_line_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    let core = lab_core(dir.path());
    core.create_campaign(lab_campaign("t", 3, PlannerConfig::Grid, budget(2))).unwrap();
    drop(core);
    let path = dir.path().join(JOURNAL_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "not json";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(Core::open(config(dir.path())), Err(CoreError::Journal(_))));
}

fn finished_core(dir: &std::path::Path, n: u64) -> (Core, String) {
    let core = lab_core(dir);
    let (c, _) = core.create_campaign(lab_campaign("e", 3, PlannerConfig::Grid, budget(n))).unwrap();
    let id = c.campaign_id;
    core.control(&id, ControlAction::Start).unwrap();
    assert!(core.campaign(&id).unwrap().wait_until(Duration::from_secs(10), |s| s.status.is_terminal()));
    assert!(core.campaign(&id).unwrap().wait_idle(Duration::from_secs(10)));
    (core, id)
}

fn split_csv(text: &str) -> Vec<Vec<String>> {
    assert!(text.ends_with("\r\n"));
    text.split("\r\n").filter(|l| !l.is_empty()).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn csv_export_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (core, id) = finished_core(dir.path(), 2);
    let csv = String::from_utf8(core.export(&id, ExportFormat::Csv).unwrap()).unwrap();
    let rows = split_csv(&csv);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], ["index", "status", "x", "y", "objective", "started", "ended"]);
    assert!(rows.iter().all(|r| r.len() == 7));
    assert_eq!(rows[1][..4], ["0", "DONE", "0.0", "0.0"]);
    assert_eq!(rows[2][..4], ["1", "DONE", "0.0", "0.5"]);
    let st = core.campaign_state(&id).unwrap();
    let obj: f64 = rows[1][4].parse().unwrap();
    assert_eq!(obj, st.experiments[0].objective_value.unwrap());
}

#[test]
fn csv_export_of_empty_campaign_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let core = lab_core(dir.path());
    let (c, _) = core.create_campaign(lab_campaign("e", 3, PlannerConfig::Grid, budget(1))).unwrap();
    let csv = core.export(&c.campaign_id, ExportFormat::Csv).unwrap();
    assert_eq!(csv, b"index,status,x,y,objective,started,ended\r\n");
    assert_eq!(core.export(&c.campaign_id, ExportFormat::Json).unwrap(), b"[]");
}

#[test]
fn json_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (core, id) = finished_core(dir.path(), 4);
    let bytes = core.export(&id, ExportFormat::Json).unwrap();
    let back: Vec<ExperimentRecord> = from_data(&parse(&bytes).unwrap()).unwrap();
    assert_eq!(back, core.campaign_state(&id).unwrap().experiments);
    // Reopening reproduces the export byte for byte.
    drop(core);
    let core = lab_core(dir.path());
    assert_eq!(core.export(&id, ExportFormat::Json).unwrap(), bytes);
}

#[test]
fn experiment_query_filters() {
    let dir = tempfile::tempdir().unwrap();
    let (core, id) = finished_core(dir.path(), 6);
    let all = core.experiments(&id, &ExperimentQuery::default()).unwrap();
    assert_eq!(all.len(), 6);
    let range = core.experiments(&id, &ExperimentQuery { from: Some(2), to: Some(5), ..Default::default() }).unwrap();
    assert_eq!(range.iter().map(|r| r.index).collect::<Vec<_>>(), [2, 3, 4]);
    let failed = ExperimentQuery { status: Some(ExperimentStatus::Failed), ..Default::default() };
    assert!(core.experiments(&id, &failed).unwrap().is_empty());
    let done = ExperimentQuery { status: Some(ExperimentStatus::Done), from: Some(5), ..Default::default() };
    assert_eq!(core.experiments(&id, &done).unwrap().len(), 1);
    assert!(matches!(core.experiments("c-99", &ExperimentQuery::default()), Err(CoreError::UnknownCampaign(_))));
}
