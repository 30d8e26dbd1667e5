//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use vpsim::config::Role;
use vpsim::gateway::{Audited, MockPolicy, Retrying, ScriptedMock, SharedGateway};
use vpsim::manager::{ManagerParts, SessionManager};
use vpsim::service::{router, AppState};
use vpsim::store::SessionStore;
use vpsim_core::adjustment::DirectionTable;
use vpsim_core::case::CaseCollection;
use vpsim_core::evaluation::format_assessment;
use vpsim_core::safety::{CriterionJudgement, SafetyVerdict};
use vpsim_core::templates::PromptTemplates;
use vpsim_core::{AssessmentFlags, EvaluatorRole, SafetyLoopPolicy, TripartiteResponse, UtteranceAssessment};

pub const SENTINEL: &str = "SENTINEL-MONOLOGUE-7f3a9c";
pub const TRAINEE_TOKEN: &str = "trainee-token";
pub const INSTRUCTOR_TOKEN: &str = "instructor-token";

pub fn vp_reply(n: usize, monologue: &str) -> String {
    TripartiteResponse {
        inner_monologue: format!("{monologue} ({n})"),
        verbal: format!("Reply number {n}, and I still want answers."),
        non_verbal: format!("taps the bed rail {n} times"),
    }
    .to_tagged_text()
}

pub fn verdict(ok: [bool; 4]) -> String {
    SafetyVerdict::new([0, 1, 2, 3].map(|i| {
        if ok[i] {
            CriterionJudgement::pass(format!("Criterion {i} met."))
        } else {
            CriterionJudgement::fail(format!("Criterion {i} violated: the patient threatens the nurse."))
        }
    }))
    .to_tagged_text()
}

pub fn pass() -> String {
    verdict([true; 4])
}

pub fn reject() -> String {
    verdict([true, false, true, true])
}

pub fn eval_reply(flags: AssessmentFlags) -> String {
    format_assessment(&UtteranceAssessment::from_flags(EvaluatorRole::NursingProfessor, flags))
}

/// Flags whose score rises by one per turn (0, 1, 2, 3, 4), with the sticky
/// strategy set carrying earlier strategies forward.
pub fn improving_flags(turn: usize) -> AssessmentFlags {
    let mut f = AssessmentFlags::default();
    if turn >= 2 {
        f.calm = true;
        f.clear = true;
    }
    if turn >= 3 {
        f.empathy_level = 4;
    }
    if turn == 4 {
        f.autonomy_used = true;
    }
    if turn == 5 {
        f.limit_setting_used = true;
    }
    f
}

pub const IMPROVING_NURSE: [&str; 5] = [
    "Wait. You need to calm down.",
    "I understand. Please tell me what is bothering you.",
    "You have been waiting a long time and that must be really frustrating.",
    "Would you like to choose whether we adjust the dose now or after the doctor's round?",
    "I can't give more than the prescribed dose, but I'll call the doctor right away.",
];

/// Evaluators that follow [`improving_flags`]; generator and judge always fine.
pub fn improving_policy(monologue: &str) -> MockPolicy {
    let evals: Vec<String> = (1..=5).map(|t| eval_reply(improving_flags(t))).collect();
    let eval_refs: Vec<&str> = evals.iter().map(String::as_str).collect();
    let replies: Vec<String> = (1..=5).map(|n| vp_reply(n, monologue)).collect();
    let reply_refs: Vec<&str> = replies.iter().map(String::as_str).collect();
    let mut p = MockPolicy::new();
    for role in EvaluatorRole::ALL {
        p = p.on_tag(&role.tag(), &eval_refs);
    }
    p.on_tag("generate", &reply_refs).on_tag("safety", &[&pass()])
}

pub fn audited_gateway(policy: MockPolicy, audit: &Path) -> SharedGateway {
    Arc::new(Retrying::new(Audited::to_file(ScriptedMock::new(policy), audit).unwrap(), 3))
}

pub fn manager_with(dir: &Path, gateway: SharedGateway, policy: SafetyLoopPolicy, turn_cap: u32) -> SessionManager {
    let n = Arc::new(AtomicU64::new(0));
    let clock = Arc::new(AtomicU64::new(1_700_000_000_000));
    SessionManager::new(ManagerParts {
        store: SessionStore::open(dir).unwrap(),
        cases: CaseCollection::bundled(),
        templates: PromptTemplates::default(),
        directions: DirectionTable::default(),
        policy,
        turn_cap,
        gateway,
    })
    .with_clock(Arc::new(move || clock.fetch_add(1_000, Ordering::Relaxed)))
    .with_ids(Arc::new(move || format!("session-{}", n.fetch_add(1, Ordering::Relaxed))))
}

pub fn tokens() -> BTreeMap<String, Role> {
    BTreeMap::from([(TRAINEE_TOKEN.to_string(), Role::Trainee), (INSTRUCTOR_TOKEN.to_string(), Role::Instructor)])
}

/// Starts the API on an ephemeral port in a background runtime.
pub fn spawn_server(manager: SessionManager) -> SocketAddr {
    let state = Arc::new(AppState { manager, tokens: tokens() });
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(state)).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

pub struct Client {
    agent: ureq::Agent,
    base: String,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

impl Client {
    pub fn new(addr: SocketAddr) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { agent, base: format!("http://{addr}") }
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> Reply {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut r = req.call().unwrap();
        Reply { status: r.status().as_u16(), body: r.body_mut().read_to_string().unwrap() }
    }

    pub fn post(&self, path: &str, token: Option<&str>, body: serde_json::Value) -> Reply {
        let mut req = self.agent.post(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut r = req.send_json(body).unwrap();
        Reply { status: r.status().as_u16(), body: r.body_mut().read_to_string().unwrap() }
    }
}
