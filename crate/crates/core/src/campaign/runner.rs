use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, MutexGuard};

use super::engine::{
    begin_experiment, control, evaluate_stop, execute_pipeline, finish_experiment, plan, stop_campaign, Engine,
    EngineError, InFlight, PlanOutcome, PlanRequest,
};
use super::spec::{CampaignStatus, ControlAction, StopDecision, StopReason};
use super::state::CampaignState;

struct Slot {
    state: CampaignState,
    runner_active: bool,
    inflight: Option<Arc<InFlight>>,
}

/// A campaign plus the single executor thread that advances it while it is
/// RUNNING.
pub struct CampaignHandle {
    slot: Mutex<Slot>,
    changed: Condvar,
    engine: Engine,
}

impl CampaignHandle {
    pub fn new(state: CampaignState, engine: Engine) -> Arc<Self> {
        Arc::new(Self {
            slot: Mutex::new(Slot { state, runner_active: false, inflight: None }),
            changed: Condvar::new(),
            engine,
        })
    }

    pub fn snapshot(&self) -> CampaignState {
        self.slot.lock().state.clone()
    }

    pub fn with_state<R>(&self, f: impl FnOnce(&CampaignState) -> R) -> R {
        f(&self.slot.lock().state)
    }

    pub fn is_runner_active(&self) -> bool {
        self.slot.lock().runner_active
    }

    /// Applies a lifecycle action and makes sure an executor runs while the
    /// campaign is RUNNING.
    pub fn control(self: &Arc<Self>, action: ControlAction) -> Result<CampaignState, EngineError> {
        let mut slot = self.slot.lock();
        let inflight = slot.inflight.clone();
        control(&mut slot.state, action, &self.engine, inflight.as_deref())?;
        if slot.state.status == CampaignStatus::Running && !slot.runner_active {
            slot.runner_active = true;
            let me = Arc::clone(self);
            std::thread::Builder::new()
                .name(format!("campaign-{}", slot.state.campaign_id))
                .spawn(move || me.run())
                .expect("spawn campaign runner");
        }
        self.changed.notify_all();
        Ok(slot.state.clone())
    }

    /// Blocks until `pred` holds for the state or `timeout` passes.
    pub fn wait_until(&self, timeout: Duration, mut pred: impl FnMut(&CampaignState) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        let mut slot = self.slot.lock();
        while !pred(&slot.state) {
            if self.changed.wait_until(&mut slot, deadline).timed_out() {
                return pred(&slot.state);
            }
        }
        true
    }

    /// Waits for the executor to go idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut slot = self.slot.lock();
        while slot.runner_active {
            if self.changed.wait_until(&mut slot, deadline).timed_out() {
                return !slot.runner_active;
            }
        }
        true
    }

    fn retire(&self, mut slot: MutexGuard<'_, Slot>) {
        slot.runner_active = false;
        slot.inflight = None;
        self.changed.notify_all();
    }

    /// Journal failures leave the campaign paused in memory, which is also
    /// how it will come back after a restart.
    fn halt(&self, mut slot: MutexGuard<'_, Slot>, err: EngineError) {
        log::error!("{}: halting: {err}", slot.state.campaign_id);
        if slot.state.status == CampaignStatus::Running {
            slot.state.status = CampaignStatus::Paused;
        }
        self.retire(slot);
    }

    fn run(self: Arc<Self>) {
        let engine = &self.engine;
        loop {
            let mut slot = self.slot.lock();
            if slot.state.status != CampaignStatus::Running {
                return self.retire(slot);
            }
            if let StopDecision::Stop(reason) = evaluate_stop(&slot.state, engine.clock.now_ms()) {
                if let Err(e) = stop_campaign(&mut slot.state, reason, engine) {
                    return self.halt(slot, e);
                }
                return self.retire(slot);
            }
            let req = PlanRequest::of(&slot.state);
            drop(slot);

            let proposal = plan(&req, &engine.registry);

            let mut slot = self.slot.lock();
            if slot.state.status != CampaignStatus::Running || slot.state.experiments.len() != req.history.len() {
                continue;
            }
            let (params, planner_state) = match proposal {
                PlanOutcome::Proposal { params, planner_state, .. } => (params, planner_state),
                PlanOutcome::Exhausted | PlanOutcome::Failed(_) => {
                    let reason = match proposal {
                        PlanOutcome::Exhausted => StopReason::PlannerExhausted,
                        PlanOutcome::Failed(e) => {
                            log::warn!("{}: planner failed: {e}", slot.state.campaign_id);
                            StopReason::FatalError
                        }
                        PlanOutcome::Proposal { .. } => unreachable!(),
                    };
                    if let Err(e) = stop_campaign(&mut slot.state, reason, engine) {
                        return self.halt(slot, e);
                    }
                    self.changed.notify_all();
                    continue;
                }
            };
            let index = match begin_experiment(&mut slot.state, params.clone(), planner_state, engine) {
                Ok(i) => i,
                Err(e) => return self.halt(slot, e),
            };
            let inflight = InFlight::new(index);
            slot.inflight = Some(Arc::clone(&inflight));
            let spec = slot.state.spec.clone();
            self.changed.notify_all();
            drop(slot);

            let outcome = execute_pipeline(&spec, &params, &engine.registry, Some(&inflight));

            let mut slot = self.slot.lock();
            slot.inflight = None;
            let finished = finish_experiment(&mut slot.state, index, outcome, engine);
            self.changed.notify_all();
            if let Err(e) = finished {
                return self.halt(slot, e);
            }
        }
    }
}
