//! Core logic for an adaptive virtual-patient (VP) trainer.
//!
//! Every trainee utterance is judged by three evaluator personas, the
//! unanimous verdict is turned into a 0..=5 communication score, the score
//! selects a behavioural direction for the patient, and the generated patient
//! reply is vetted by a safety judge before delivery.
//!
//! This crate is `no_std` (with `alloc`). It knows nothing about files,
//! sockets or threads: model access goes through the [`llm::LlmGateway`]
//! trait and timestamps are supplied by the caller. The `vpsim` crate provides
//! the gateways, persistence, HTTP service and CLI.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adjustment;
pub mod case;
pub mod evaluation;
pub mod generation;
pub mod llm;
pub mod safety;
pub mod session;
pub mod stats;
pub mod tags;
pub mod templates;
pub mod transcript;

#[cfg(test)]
pub(crate) mod testing;

pub use adjustment::{Condition, Direction, DirectionTable};
pub use case::{CaseSpec, ChallengingPatientType, PatientProfile, ReviewStatus};
pub use evaluation::{
    AggregatedAssessment, AssessmentFlags, CommunicationScore, EvaluatorRole, Strategy, StrategySet,
    UtteranceAssessment,
};
pub use generation::{SafetyWarning, TripartiteResponse};
pub use llm::{ChatRequest, ChatResponse, GatewayError, LlmGateway};
pub use safety::{SafetyLoopPolicy, SafetyVerdict};
pub use session::{SessionEvent, SessionState, Turn, TurnContext, View};
pub use transcript::{Line, Speaker};
