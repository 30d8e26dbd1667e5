//! Owns live sessions: one turn in flight per session, every record written
//! to the log before it is applied in memory.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use vpsim_core::adjustment::DirectionTable;
use vpsim_core::case::CaseCollection;
use vpsim_core::session::{
    create_session, run_turn, CloseReason, Millis, ReplayError, SurveyResponse, TurnError,
};
use vpsim_core::templates::PromptTemplates;
use vpsim_core::{Condition, SafetyLoopPolicy, SessionEvent, SessionState, Turn, TurnContext};

use crate::gateway::SharedGateway;
use crate::store::{SessionStore, StoreError};

pub type Clock = Arc<dyn Fn() -> Millis + Send + Sync>;
pub type IdSource = Arc<dyn Fn() -> String + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0))
}

pub fn uuid_ids() -> IdSource {
    Arc::new(|| uuid::Uuid::new_v4().simple().to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum ManagerError {
    #[error("unknown case {0:?}")]
    UnknownCase(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error(transparent)]
    Turn(#[from] TurnError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("session state rejected records: {0}")]
    Replay(#[from] ReplayError),
}

/// What a committed turn produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub turn_index: u32,
    pub nurse: Turn,
    pub vp: Turn,
    pub closed: bool,
}

struct Slot {
    state: SessionState,
    in_flight: bool,
}

pub struct ManagerParts {
    pub store: SessionStore,
    pub cases: CaseCollection,
    pub templates: PromptTemplates,
    pub directions: DirectionTable,
    pub policy: SafetyLoopPolicy,
    pub turn_cap: u32,
    pub gateway: SharedGateway,
}

pub struct SessionManager {
    parts: ManagerParts,
    sessions: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    clock: Clock,
    ids: IdSource,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl SessionManager {
    pub fn new(parts: ManagerParts) -> Self {
        Self { parts, sessions: Mutex::new(HashMap::new()), clock: system_clock(), ids: uuid_ids() }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_ids(mut self, ids: IdSource) -> Self {
        self.ids = ids;
        self
    }

    pub fn cases(&self) -> &CaseCollection {
        &self.parts.cases
    }

    pub fn store(&self) -> &SessionStore {
        &self.parts.store
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, ManagerError> {
        let mut map = lock(&self.sessions);
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        if !self.parts.store.exists(id) {
            return Err(ManagerError::UnknownSession(id.into()));
        }
        let state = self.parts.store.load(id)?;
        let slot = Arc::new(Mutex::new(Slot { state, in_flight: false }));
        map.insert(id.into(), slot.clone());
        Ok(slot)
    }

    pub fn create(&self, case_id: &str, condition: Condition) -> Result<SessionState, ManagerError> {
        let case = self.parts.cases.get(case_id).ok_or_else(|| ManagerError::UnknownCase(case_id.into()))?;
        let id = (self.ids)();
        let created = create_session(id.clone(), case, condition, (self.clock)());
        let state = SessionState::from_created(&created)?;
        self.parts.store.append(&id, std::slice::from_ref(&created))?;
        lock(&self.sessions).insert(id, Arc::new(Mutex::new(Slot { state: state.clone(), in_flight: false })));
        Ok(state)
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ManagerError> {
        let slot = self.slot(id)?;
        let state = lock(&slot).state.clone();
        Ok(state)
    }

    /// Persists then applies; on a crash between the two, replay recovers.
    fn commit(&self, slot: &mut Slot, events: &[SessionEvent]) -> Result<(), ManagerError> {
        let mut next = slot.state.clone();
        next.apply_events(events)?;
        self.parts.store.append(&next.session_id, events)?;
        let closed_now = slot.state.is_open() && !next.is_open();
        slot.state = next;
        if closed_now {
            if let Err(e) = self.parts.store.write_snapshot(&slot.state) {
                tracing::warn!(error = %e, "snapshot write failed");
            }
        }
        Ok(())
    }

    pub fn post_message(&self, id: &str, text: &str) -> Result<TurnOutcome, ManagerError> {
        let slot = self.slot(id)?;
        let snapshot = {
            let mut s = lock(&slot);
            if s.in_flight {
                return Err(TurnError::ConcurrentTurn.into());
            }
            if !s.state.is_open() {
                return Err(TurnError::SessionClosed.into());
            }
            s.in_flight = true;
            s.state.clone()
        };
        struct Release<'a>(&'a Mutex<Slot>);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                lock(self.0).in_flight = false;
            }
        }
        let _release = Release(&slot);

        let ctx = TurnContext {
            templates: &self.parts.templates,
            directions: &self.parts.directions,
            policy: self.parts.policy,
            turn_cap: self.parts.turn_cap,
        };
        let result = run_turn(&snapshot, text, &ctx, &*self.parts.gateway, (self.clock)());
        let mut s = lock(&slot);
        match result {
            Ok(events) => {
                self.commit(&mut s, &events)?;
                let (turn_index, nurse, vp) = events
                    .iter()
                    .find_map(|e| match e {
                        SessionEvent::TurnCommitted { turn_index, nurse, vp, .. } => {
                            Some((*turn_index, nurse.clone(), vp.clone()))
                        }
                        _ => None,
                    })
                    .expect("run_turn commits on success");
                Ok(TurnOutcome { turn_index, nurse, vp, closed: !s.state.is_open() })
            }
            Err(failure) => {
                self.commit(&mut s, &failure.events)?;
                Err(failure.error.into())
            }
        }
    }

    pub fn close(&self, id: &str) -> Result<SessionState, ManagerError> {
        let slot = self.slot(id)?;
        let mut s = lock(&slot);
        if s.in_flight {
            return Err(TurnError::ConcurrentTurn.into());
        }
        let ev = s.state.close(CloseReason::Requested, (self.clock)())?;
        self.commit(&mut s, &[ev])?;
        Ok(s.state.clone())
    }

    pub fn survey(&self, id: &str, survey: SurveyResponse) -> Result<SessionState, ManagerError> {
        let slot = self.slot(id)?;
        let mut s = lock(&slot);
        let ev = s.state.survey(survey, (self.clock)())?;
        self.commit(&mut s, &[ev])?;
        Ok(s.state.clone())
    }
}
