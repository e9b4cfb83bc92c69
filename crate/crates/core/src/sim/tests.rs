use super::*;

fn small(name: &str, seed: u64) -> Scenario {
    Scenario {
        name: name.into(),
        seed,
        participants: 3,
        ops: 150,
        ..Scenario::default()
    }
}

#[test]
fn converges_and_is_deterministic() {
    let a = run_scenario(&small("basic", 7));
    let b = run_scenario(&small("basic", 7));
    assert!(a.passed(), "{}", a.render());
    assert_eq!(a.render(), b.render());
    assert_eq!(a.ops_submitted, 150);
}

#[test]
fn dropped_update_triggers_single_resync() {
    let mut s = small("gap", 3);
    s.gaps.push(Gap { client: 1, at_seq: 60 });
    let r = run_scenario(&s);
    assert!(r.passed(), "{}", r.render());
    assert_eq!(r.clients[1].gaps, 1);
    assert_eq!(r.clients[1].full_states, 2);
    assert_eq!(r.clients[0].full_states, 1);
}

#[test]
fn disconnect_rejoins_with_fresh_identity() {
    let mut s = small("disconnect", 5);
    s.ops = 300;
    s.disconnects.push(Disconnect { client: 2, at_ms: 800, duration_ms: 2500 });
    let r = run_scenario(&s);
    assert!(r.passed(), "{}", r.render());
    assert_eq!(r.clients[2].rejoins, 1);
    assert_eq!(r.clients[2].full_states, 2);
}

#[test]
fn silent_client_expires_and_recovers() {
    let mut s = small("silence", 9);
    s.ops = 400;
    s.op_interval_ms = 60;
    s.silences.push(Silence { client: 0, at_ms: 500, duration_ms: 12_000 });
    let r = run_scenario(&s);
    assert!(r.passed(), "{}", r.render());
    assert_eq!(r.expired, 1);
    assert!(r.clients[0].rejoins >= 1);
}

#[test]
fn corrupt_frame_is_rejected_without_breaking_the_session() {
    let mut s = small("corrupt", 11);
    s.corruptions.push(Corrupt { client: 0, at_ms: 300 });
    let r = run_scenario(&s);
    assert!(r.passed(), "{}", r.render());
    assert!(r.rejections.get("SchemaViolation").copied().unwrap_or(0) >= 1, "{}", r.render());
}

#[test]
fn join_storm_respects_capacity() {
    let mut s = small("storm", 13);
    s.participants = 10;
    s.observers = 2;
    let r = run_scenario(&s);
    assert!(r.passed(), "{}", r.render());
    assert_eq!(r.peak_participants, 6);
    assert_eq!(r.session_full_rejections(), 4);
    let synced = r.clients.iter().filter(|c| c.phase == ClientPhase::Synced).count();
    assert_eq!(synced, 8);
}

#[test]
fn lossy_links_still_converge() {
    let mut s = small("lossy", 17);
    s.ops = 400;
    s.network.drop_probability = 0.05;
    let r = run_scenario(&s);
    assert!(r.passed(), "{}", r.render());
}

#[test]
fn divergence_pinpoints_tampered_op() {
    let s = small("tamper", 19);
    let mut sim = Simulation::new(s);
    while sim.client(0).replica().server_seq < 40 {
        sim.step();
    }
    let log = sim.canonical_log().to_vec();
    let client = sim.client(0);
    let (base, applied) = client.history();
    let mut tampered = log[..client.replica().server_seq as usize].to_vec();
    assert_eq!(first_divergence(&tampered, base, applied, client.replica()), None);
    let target = applied[applied.len() / 2].0;
    tampered[target as usize - 1] = OpPayload::SelectRow { object: "tampered".into(), row: Some(u64::MAX) };
    let d = first_divergence(&tampered, base, applied, client.replica()).expect("diverges");
    assert_eq!(d.seq, target);
}
