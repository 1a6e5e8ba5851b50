#![allow(dead_code)]

use std::sync::Arc;

use followup_core::clustering::Grouping;
use followup_core::fixtures::{self, Ledger};
use followup_core::flow::FlowConfig;
use followup_core::form::FormSpec;
use followup_core::gateway::{ChatBackend, Gateway, GatewayConfig};
use followup_core::kb::{KbBuildConfig, KnowledgeBase};
use followup_core::patient::{Patient, ScriptedPatient};
use followup_core::session::SessionState;
use followup_core::sim::SimModel;
use followup_core::simulate::{prepare, run_baseline, run_modular, SimContext};
use followup_core::LogicalClock;

pub fn gateway(backend: Arc<dyn ChatBackend>) -> Gateway {
    Gateway::with_config(backend, GatewayConfig::default(), Arc::new(LogicalClock::default()))
}

pub fn sim_gateway() -> Gateway {
    gateway(Arc::new(SimModel))
}

pub fn prepared(form: &FormSpec, gw: &Gateway) -> (Grouping, KnowledgeBase) {
    let (g, kb, _) =
        prepare(form, gw, &FlowConfig::default(), &KbBuildConfig::default(), &LogicalClock::default()).unwrap();
    (g, kb)
}

pub fn scripted_patient(form: &FormSpec, ledger: &Ledger) -> ScriptedPatient {
    ScriptedPatient::new(ledger.clone(), fixtures::phrasing_table(&form.form_id))
}

pub fn modular(form: &FormSpec, patient: &dyn Patient, gw: &Gateway, sid: &str) -> SessionState {
    let (grouping, kb) = prepared(form, gw);
    modular_with(form, &grouping, &kb, patient, gw, sid, &FlowConfig::default())
}

pub fn modular_with(
    form: &FormSpec,
    grouping: &Grouping,
    kb: &KnowledgeBase,
    patient: &dyn Patient,
    gw: &Gateway,
    sid: &str,
    config: &FlowConfig,
) -> SessionState {
    let clock = LogicalClock::default();
    let pgw = sim_gateway();
    let ctx = SimContext { form, gateway: gw, patient_gateway: &pgw, patient, clock: &clock, config };
    run_modular(&ctx, grouping, kb, sid, "scripted").unwrap()
}

pub fn baseline(form: &FormSpec, patient: &dyn Patient, gw: &Gateway, sid: &str) -> SessionState {
    baseline_with(form, patient, gw, sid, &FlowConfig::default())
}

pub fn baseline_with(form: &FormSpec, patient: &dyn Patient, gw: &Gateway, sid: &str, config: &FlowConfig) -> SessionState {
    let clock = LogicalClock::default();
    let pgw = sim_gateway();
    let ctx = SimContext { form, gateway: gw, patient_gateway: &pgw, patient, clock: &clock, config };
    run_baseline(&ctx, sid, "scripted").unwrap()
}

/// Hand-driven modular session over an in-memory log.
pub struct Driver {
    pub form: FormSpec,
    pub grouping: Grouping,
    pub kb: KnowledgeBase,
    pub gateway: Gateway,
    pub clock: LogicalClock,
    pub config: FlowConfig,
    pub core: followup_core::session::SessionCore,
}

impl Driver {
    pub fn new(form: FormSpec) -> Self {
        Self::with_config(form, FlowConfig::default())
    }

    pub fn with_config(form: FormSpec, config: FlowConfig) -> Self {
        let gateway = sim_gateway();
        let (grouping, kb) = prepared(&form, &gateway);
        let core = followup_core::session::SessionCore::new(Box::new(followup_core::session::MemorySink::default()));
        Driver { form, grouping, kb, gateway, clock: LogicalClock::default(), config, core }
    }

    pub fn start(&mut self) {
        let grouping = self.grouping.clone();
        let engine = followup_core::flow::ModularEngine {
            form: &self.form,
            kb: &self.kb,
            gateway: &self.gateway,
            clock: &self.clock,
            config: &self.config,
        };
        engine.start(&mut self.core, "t1", &grouping, "test").unwrap();
    }

    pub fn say(&mut self, text: &str) {
        let engine = followup_core::flow::ModularEngine {
            form: &self.form,
            kb: &self.kb,
            gateway: &self.gateway,
            clock: &self.clock,
            config: &self.config,
        };
        engine.step(&mut self.core, text, None).unwrap();
    }

    pub fn resume(&mut self) {
        let engine = followup_core::flow::ModularEngine {
            form: &self.form,
            kb: &self.kb,
            gateway: &self.gateway,
            clock: &self.clock,
            config: &self.config,
        };
        engine.resume(&mut self.core).unwrap();
    }

    pub fn asked(&self) -> &followup_core::transcript::Turn {
        self.core.state.awaiting().expect("a question is awaiting a reply")
    }

    /// Scripted answer for the given items.
    pub fn answer_text(&self, ids: &[String], ledger: &Ledger) -> String {
        ids.iter()
            .map(|id| {
                let q = self.form.question(id).unwrap();
                followup_core::patient::default_segment(q, &ledger[id])
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// In-memory sink whose events stay readable after the core takes ownership.
#[derive(Clone, Default)]
pub struct SharedSink(pub std::sync::Arc<std::sync::Mutex<Vec<followup_core::session::SessionEvent>>>);

impl SharedSink {
    pub fn events(&self) -> Vec<followup_core::session::SessionEvent> {
        self.0.lock().unwrap().clone()
    }
}

impl followup_core::session::EventSink for SharedSink {
    fn append(
        &mut self,
        event: &followup_core::session::SessionEvent,
    ) -> Result<(), followup_core::session::SessionError> {
        self.0.lock().unwrap().push(event.clone());
        Ok(())
    }
}

pub const GIBBERISH: &str = "Blorp fizzle wug.";

/// Scripted patient that mumbles on a seeded share of turns.
pub struct FlakyPatient {
    pub inner: ScriptedPatient,
    pub seed: u64,
    pub percent: u64,
}

impl Patient for FlakyPatient {
    fn reply(
        &self,
        form: &FormSpec,
        turns: &[followup_core::transcript::Turn],
        gateway: &Gateway,
        session_id: Option<&str>,
    ) -> Result<String, followup_core::patient::PatientError> {
        let mix = (self.seed ^ (turns.len() as u64)).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 32;
        if mix % 100 < self.percent {
            return Ok(GIBBERISH.to_string());
        }
        self.inner.reply(form, turns, gateway, session_id)
    }
}

/// Modular run that also returns the event log.
pub fn modular_logged(
    form: &FormSpec,
    patient: &dyn Patient,
    gw: &Gateway,
    config: &FlowConfig,
) -> (SessionState, Vec<followup_core::session::SessionEvent>, Grouping) {
    let (grouping, kb) = prepared(form, gw);
    let clock = LogicalClock::default();
    let pgw = sim_gateway();
    let ctx = SimContext { form, gateway: gw, patient_gateway: &pgw, patient, clock: &clock, config };
    let sink = SharedSink::default();
    let state = followup_core::simulate::run_modular_with_sink(&ctx, &grouping, &kb, "p", "scripted", Box::new(sink.clone()))
        .unwrap();
    (state, sink.events(), grouping)
}
