//! Batch simulation: drive a session in either mode against a simulated
//! patient until it completes or aborts.

use crate::baseline::BaselineEngine;
use crate::clock::Clock;
use crate::clustering::Grouping;
use crate::flow::{plan_session, FlowConfig, FlowError, ModularEngine};
use crate::form::FormSpec;
use crate::gateway::Gateway;
use crate::kb::{build_kb, KbBuildConfig, KbManifest, KnowledgeBase};
use crate::patient::{make_personas, Patient, PatientError};
use crate::question_gen::GenError;
use crate::session::{abort_reason, EventKind, EventSink, MemorySink, SessionCore, SessionState};
use crate::transcript::AbortReason;

/// Everything a simulated run needs besides the mode-specific inputs.
pub struct SimContext<'a> {
    pub form: &'a FormSpec,
    pub gateway: &'a Gateway,
    pub patient_gateway: &'a Gateway,
    pub patient: &'a dyn Patient,
    pub clock: &'a dyn Clock,
    pub config: &'a FlowConfig,
}

fn patient_abort(core: &mut SessionCore, err: &PatientError, clock: &dyn Clock) -> Result<(), FlowError> {
    let reason = match err {
        PatientError::Gateway(e) => abort_reason(e),
        _ => AbortReason::Gateway,
    };
    log::warn!("session {}: patient failed: {err}", core.state.session_id);
    core.commit(EventKind::Aborted { reason }, clock.now(), None)?;
    Ok(())
}

fn drive(
    ctx: &SimContext,
    core: &mut SessionCore,
    mut step: impl FnMut(&mut SessionCore, &str) -> Result<(), FlowError>,
) -> Result<(), FlowError> {
    while core.state.is_active() {
        match ctx.patient.reply(ctx.form, &core.state.turns, ctx.patient_gateway, None) {
            Ok(text) => step(core, &text)?,
            Err(e) => patient_abort(core, &e, ctx.clock)?,
        }
    }
    Ok(())
}

pub fn run_modular_with_sink(
    ctx: &SimContext,
    grouping: &Grouping,
    kb: &KnowledgeBase,
    session_id: &str,
    patient_label: &str,
    sink: Box<dyn EventSink>,
) -> Result<SessionState, FlowError> {
    let engine = ModularEngine { form: ctx.form, kb, gateway: ctx.gateway, clock: ctx.clock, config: ctx.config };
    let mut core = SessionCore::new(sink);
    engine.start(&mut core, session_id, grouping, patient_label)?;
    drive(ctx, &mut core, |core, text| engine.step(core, text, None))?;
    Ok(core.state)
}

pub fn run_modular(
    ctx: &SimContext,
    grouping: &Grouping,
    kb: &KnowledgeBase,
    session_id: &str,
    patient_label: &str,
) -> Result<SessionState, FlowError> {
    run_modular_with_sink(ctx, grouping, kb, session_id, patient_label, Box::new(MemorySink::default()))
}

pub fn run_baseline_with_sink(
    ctx: &SimContext,
    session_id: &str,
    patient_label: &str,
    sink: Box<dyn EventSink>,
) -> Result<SessionState, FlowError> {
    let engine = BaselineEngine { form: ctx.form, gateway: ctx.gateway, clock: ctx.clock, caps: ctx.config.caps };
    let mut core = SessionCore::new(sink);
    engine.start(&mut core, session_id, patient_label)?;
    drive(ctx, &mut core, |core, text| Ok(engine.step(core, text, None)?))?;
    Ok(core.state)
}

pub fn run_baseline(ctx: &SimContext, session_id: &str, patient_label: &str) -> Result<SessionState, FlowError> {
    run_baseline_with_sink(ctx, session_id, patient_label, Box::new(MemorySink::default()))
}

/// Offline preprocessing for modular runs: the top-level grouping and the
/// extraction knowledge base built from it.
pub fn prepare(
    form: &FormSpec,
    gateway: &Gateway,
    config: &FlowConfig,
    kb_config: &KbBuildConfig,
    clock: &dyn Clock,
) -> Result<(Grouping, KnowledgeBase, KbManifest), GenError> {
    let grouping = plan_session(form, gateway, &config.cluster);
    let (kb, manifest) = build_kb(form, &grouping, &make_personas(), gateway, kb_config, clock)?;
    Ok((grouping, kb, manifest))
}
