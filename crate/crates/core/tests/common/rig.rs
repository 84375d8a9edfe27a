use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tempfile::TempDir;
use vdesk_core::action::gate::Decision;
use vdesk_core::action::{Action, AuditRecord, ConfirmError, EngineConfig, GatingMode};
use vdesk_core::rfb::{MockDesktop, Scenario};
use vdesk_core::session::{
    CreateSession, SessionConfig, SessionError, SessionManager, Submitted, Target,
};

use super::fixture;

pub struct Rig {
    pub mock: MockDesktop,
    pub manager: SessionManager,
    pub data: TempDir,
}

pub fn config(data: &TempDir, mock: &MockDesktop) -> SessionConfig {
    let mut cfg = SessionConfig::new(data.path())
        .load_suite(&fixture("fixtures/desk/suite.json"))
        .unwrap()
        .load_solutions(&fixture("fixtures/desk/solutions.json"))
        .unwrap();
    cfg.allowlist = vec![Target {
        host: "127.0.0.1".into(),
        port: mock.port(),
    }];
    cfg.engine = EngineConfig::immediate();
    cfg.external_idle_timeout = Duration::from_millis(300);
    cfg
}

pub fn rig_with(edit: impl FnOnce(&mut SessionConfig)) -> Rig {
    let scenario = Scenario::load(&fixture("fixtures/desk/scenario.json")).unwrap();
    let mock = MockDesktop::start(scenario).unwrap();
    let data = tempfile::tempdir().unwrap();
    let mut cfg = config(&data, &mock);
    edit(&mut cfg);
    let manager = SessionManager::open(cfg).unwrap();
    Rig {
        mock,
        manager,
        data,
    }
}

pub fn rig() -> Rig {
    rig_with(|_| {})
}

pub fn create(rig: &Rig, gating: GatingMode) -> String {
    rig.manager
        .create_session(CreateSession {
            host: "127.0.0.1".into(),
            port: rig.mock.port(),
            password: None,
            gating: Some(gating),
        })
        .unwrap()
        .id
}

pub fn wait_frame(rig: &Rig, id: &str) {
    let deadline = Instant::now() + Duration::from_secs(2);
    while rig.manager.observation(id, 1).is_err() {
        assert!(Instant::now() < deadline, "no frame within 2 s");
        std::thread::sleep(Duration::from_millis(5));
    }
}

pub fn pending_id(s: Submitted) -> String {
    match s {
        Submitted::Pending { request } => request.id,
        other => panic!("expected pending, got {other:?}"),
    }
}

/// Many sessions, each with one gated command at a time, and several racing
/// resolvers per request. Audit records must show one execution per
/// approval and none for rejections.
pub fn gating_race(seed: u64, sessions: usize, rounds: usize) -> Result<(), String> {
    let rig = rig();
    let mgr = Arc::new(rig.manager.clone());
    let ids: Vec<String> = (0..sessions).map(|_| create(&rig, GatingMode::GatedExec)).collect();
    for id in &ids {
        wait_frame(&rig, id);
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut expected: HashMap<String, Option<bool>> = HashMap::new();
    let mut markers = Vec::new();
    for round in 0..rounds {
        let mut handles = Vec::new();
        for (si, id) in ids.iter().enumerate() {
            let marker = format!("m{round}-{si}");
            let req = pending_id(
                mgr.submit_action(id, Action::exec(format!("touch {marker}"))).unwrap(),
            );
            markers.push((id.clone(), marker, req.clone()));
            expected.insert(req.clone(), None);
            for _ in 0..rng.random_range(2..5) {
                let (mgr, req) = (mgr.clone(), req.clone());
                let decision = if rng.random_bool(0.5) { Decision::Approve } else { Decision::Reject };
                let delay = rng.random_range(0..3);
                handles.push(std::thread::spawn(move || {
                    std::thread::sleep(Duration::from_millis(delay));
                    (req.clone(), decision, mgr.resolve_confirmation(&req, decision, None))
                }));
            }
        }
        for h in handles {
            let (req, decision, out) = h.join().unwrap();
            match out {
                Ok(_) => {
                    let slot = expected.get_mut(&req).unwrap();
                    if slot.is_some() {
                        return Err(format!("{req} resolved twice"));
                    }
                    *slot = Some(decision == Decision::Approve);
                }
                Err(SessionError::Confirm(ConfirmError::AlreadyResolved(_))) => {}
                Err(e) => return Err(format!("unexpected error {e}")),
            }
        }
    }
    let approved: HashSet<&String> = expected.iter().filter(|(_, v)| **v == Some(true)).map(|(k, _)| k).collect();
    if expected.values().any(Option::is_none) {
        return Err("a request was never resolved".into());
    }
    let audit = mgr.audit().records();
    let mut executed: HashMap<String, usize> = HashMap::new();
    for r in &audit {
        if let AuditRecord::Executed { gated: true, approval, .. } = r {
            let Some(a) = approval else {
                return Err("gated execution without approval".into());
            };
            *executed.entry(a.clone()).or_default() += 1;
        }
    }
    for (req, n) in &executed {
        if *n != 1 || !approved.contains(req) {
            return Err(format!("request {req} executed {n} times, approved: {}", approved.contains(req)));
        }
    }
    if executed.len() != approved.len() {
        return Err(format!("{} approvals but {} executions", approved.len(), executed.len()));
    }
    for (id, marker, req) in markers {
        let exists = rig.data.path().join("sessions").join(&id).join("sandbox").join(&marker).exists();
        if exists != approved.contains(&req) {
            return Err(format!("{marker}: file exists {exists}, approved {}", approved.contains(&req)));
        }
    }
    Ok(())
}

