//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any FAIL.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use bolaz_core::app::AppModel;
use bolaz_core::classify::{classify_all, injection_points, Role, SqlOp};
use bolaz_core::harness::{
    enforce_and_replay, fixture_users, random_scenario, scan, stress_replay, Replayer, ThreatMode,
};
use bolaz_core::msg::{build_intervals, PolicyContext};
use bolaz_core::runtime::{evaluate_interval, Basis, UserContext};
use bolaz_core::sql::Scalar;
use bolaz_core::store::{InMemoryStore, ResourceStore, Row, WriteOp};
use bolaz_core::taint::all_facts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{check_golden, enforcer, model, policy, reduced_address_search, store};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn address_search_reduction() -> Outcome {
    let start = Instant::now();
    let json = reduced_address_search();
    check_golden("listing1_reduced.json", &json)?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("byte-equal to golden in {took:?}"))
}

fn role_taxonomy() -> Outcome {
    let m = model("roles.json");
    let classes = classify_all(&m, &all_facts(&m));
    let got: Vec<(String, Role, Vec<String>)> = classes
        .iter()
        .map(|c| {
            (
                c.endpoint.clone(),
                c.role,
                c.injection_points.iter().map(|p| p.to_string()).collect(),
            )
        })
        .collect();
    let want: Vec<(String, Role, Vec<String>)> = vec![
        ("listProjects".into(), Role::Producer, vec![]),
        (
            "deleteProject".into(),
            Role::Consumer,
            vec!["deleteProject.projectId (Delete d1 on project.id)".into()],
        ),
        (
            "getProject".into(),
            Role::FalseProducer,
            vec!["getProject.projectId (Select g1 on project.id)".into()],
        ),
        (
            "listTasks".into(),
            Role::ProducerConsumer,
            vec!["listTasks.projectId (Select t1 on task.project_id)".into()],
        ),
        ("projectCount".into(), Role::Neither, vec![]),
    ];
    ensure(got == want, || format!("roles: {got:?}"))?;
    for (file, op) in [
        ("table1_select.json", SqlOp::Select),
        ("table1_delete.json", SqlOp::Delete),
        ("table1_insert.json", SqlOp::Insert),
        ("table1_update_set.json", SqlOp::UpdateSet),
        ("table1_update_where.json", SqlOp::UpdateWhere),
    ] {
        let m = model(file);
        let points = injection_points(&m, &all_facts(&m));
        let ops: Vec<SqlOp> = points.iter().map(|p| p.sql_op).collect();
        ensure(ops == [op], || format!("{file}: {ops:?}"))?;
    }
    Ok("5 roles and 5 statement kinds exact".into())
}

fn merge_soundness() -> Outcome {
    let start = Instant::now();
    let schema = common::gen::schema();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d65_7267);
    let (mut fired, mut violations) = (0, Vec::new());
    for _ in 0..1000 {
        let out = common::gen::check_random_pair(&mut rng, &schema);
        fired += usize::from(out.fired);
        violations.extend(out.violations);
    }
    let took = start.elapsed();
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "1000 pairs, {fired} merged, 0 violations in {:.1?}",
        took
    ))
}

/// A random address-book store: users, their addresses, and orders whose
/// address may belong to anyone.
fn random_address_store(m: &AppModel, rng: &mut ChaCha8Rng) -> (InMemoryStore, Vec<i64>) {
    let s = InMemoryStore::new(m.schema().clone());
    let users: Vec<i64> = (1..=rng.gen_range(2..=5)).collect();
    let insert = |table: &str, pairs: Vec<(&str, Scalar)>| {
        let values: Row = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        s.apply(&WriteOp::Insert {
            table: table.into(),
            values,
        })
        .unwrap();
    };
    for u in &users {
        insert(
            "user",
            vec![
                ("id", Scalar::Int(*u)),
                ("name", Scalar::Str(format!("u{u}"))),
            ],
        );
    }
    let n_addr = rng.gen_range(0..=30);
    for a in 0..n_addr {
        insert(
            "address",
            vec![
                ("a_id", Scalar::Int(1000 + a)),
                ("user_id", Scalar::Int(users[rng.gen_range(0..users.len())])),
                ("addr", Scalar::Str(format!("{a} Main St"))),
                ("detail", Scalar::Str("home".into())),
            ],
        );
    }
    if n_addr > 0 {
        for o in 0..rng.gen_range(0..=30) {
            insert(
                "orders",
                vec![
                    ("o_id", Scalar::Int(5000 + o)),
                    ("user_id", Scalar::Int(users[rng.gen_range(0..users.len())])),
                    ("a_id", Scalar::Int(1000 + rng.gen_range(0..n_addr))),
                    ("item", Scalar::Str("thing".into())),
                ],
            );
        }
    }
    (s, users)
}

fn backtracking_equivalence() -> Outcome {
    let m = model("address.json");
    let facts = all_facts(&m);
    let classes = classify_all(&m, &facts);
    let policy = policy(&m);
    let producer = classes
        .iter()
        .find(|c| c.endpoint == "listOrderAddresses")
        .ok_or("no FK producer")?;
    let fk = build_intervals(producer, &m)
        .into_iter()
        .find(|i| !i.kind.is_primary() && i.kind.table == "orders")
        .ok_or("no FK interval")?;
    let mut ctx = PolicyContext::new(&m, &facts, &classes);
    let resolved = ctx.resolve_dependence(&fk).map_err(|e| e.to_string())?;
    let back = ctx.backtrack_fk(&resolved).map_err(|e| e.to_string())?;
    ensure(!back.incomplete, || {
        "backtracking left the interval incomplete".into()
    })?;
    let point = policy
        .points()
        .find(|p| p.endpoint == "getAddress")
        .ok_or("getAddress is not guarded")?;
    let set = policy
        .set_for(point)
        .ok_or("getAddress has no interval set")?;
    let e = enforcer(&m);
    let mut checks = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, users) = random_address_store(&m, &mut rng);
        for uid in users {
            let user = UserContext::new(format!("u{uid}")).with_claim("uid", uid);
            let producer_rows: BTreeSet<Scalar> = s
                .enumerate("address")
                .unwrap()
                .into_iter()
                .filter(|r| r.get("user_id") == Some(&Scalar::Int(uid)))
                .map(|r| r["a_id"].clone())
                .collect();
            let mut backtracked = BTreeSet::new();
            for i in &back.intervals {
                backtracked
                    .extend(evaluate_interval(&policy, i, &user, &s).map_err(|e| e.to_string())?);
            }
            ensure(backtracked == producer_rows, || {
                format!("seed {seed} uid {uid}: backtracked {backtracked:?} != producer {producer_rows:?}")
            })?;
            let guarded = e
                .evaluate_set(set, &user, &s)
                .map_err(|e| e.to_string())?
                .unwrap_or_default();
            ensure(guarded == producer_rows, || {
                format!("seed {seed} uid {uid}: getAddress set {guarded:?} != producer {producer_rows:?}")
            })?;
            checks += 1;
        }
    }
    Ok(format!("20 seeds, {checks} user sets equal"))
}

fn threat_modes() -> Outcome {
    let mut tp = 0;
    for (file, mode) in [
        ("uasbf_batchdelete", ThreatMode::Uasbf),
        ("bopla_shares", ThreatMode::Bopla),
        ("bfla_changeuser", ThreatMode::Bfla),
    ] {
        let m = model(&format!("{file}.json"));
        let findings = scan(&m, &policy(&m), &store(&m), 0).map_err(|e| e.to_string())?;
        let confirmed: Vec<_> = findings.iter().filter(|f| f.confirmed).collect();
        ensure(confirmed.len() == 1 && confirmed[0].mode == mode, || {
            format!(
                "{file}: {:?}",
                confirmed.iter().map(|f| f.mode).collect::<Vec<_>>()
            )
        })?;
        tp += 1;
        let m = model(&format!("{file}_patched.json"));
        let findings = scan(&m, &policy(&m), &store(&m), 0).map_err(|e| e.to_string())?;
        ensure(findings.is_empty(), || {
            format!("{file}_patched: {} findings", findings.len())
        })?;
    }
    Ok(format!("{tp} TP, 0 FP"))
}

/// Primary keys each user owns: the row their claim names and every row
/// reaching an owned row through a foreign key.
fn ownership(
    m: &AppModel,
    s: &dyn ResourceStore,
) -> BTreeMap<String, BTreeMap<String, BTreeSet<Scalar>>> {
    let schema = s.schema();
    let tables: BTreeMap<String, Vec<Row>> = schema
        .tables()
        .iter()
        .map(|t| (t.name.clone(), s.enumerate(&t.name).unwrap()))
        .collect();
    let mut out = BTreeMap::new();
    for u in fixture_users(m) {
        let mut owned: BTreeMap<String, BTreeSet<Scalar>> = BTreeMap::new();
        for c in m.token_claims() {
            let (Some(col), Some(v)) = (&c.maps_to, u.claims.get(&c.claim)) else {
                continue;
            };
            let pk = &schema.table(&col.table).unwrap().primary_key;
            for r in &tables[&col.table] {
                if r.get(&col.column) == Some(v) {
                    owned
                        .entry(col.table.clone())
                        .or_default()
                        .insert(r[pk].clone());
                }
            }
        }
        let mut grew = true;
        while grew {
            grew = false;
            for t in schema.tables() {
                for r in &tables[&t.name] {
                    let reaches = t.foreign_keys.iter().any(|fk| {
                        r.get(&fk.column).is_some_and(|v| {
                            owned.get(&fk.ref_table).is_some_and(|s| s.contains(v))
                        })
                    });
                    if reaches
                        && owned
                            .entry(t.name.clone())
                            .or_default()
                            .insert(r[&t.primary_key].clone())
                    {
                        grew = true;
                    }
                }
            }
        }
        out.insert(u.user_id, owned);
    }
    out
}

fn enforcement_correctness() -> Outcome {
    let (mut allows, mut denies, mut requests) = (0, 0, 0);
    for file in ["order.json", "address.json", "blog.json"] {
        let m = model(file);
        for seed in 0..5 {
            let s = store(&m);
            let e = enforcer(&m);
            let sc = random_scenario(&m, &e, &s, seed, 200).map_err(|e| e.to_string())?;
            ensure(sc.steps.len() == 200, || format!("{file}: empty scenario"))?;
            let r = Replayer::new(&m, &e, &s);
            r.check(&sc).map_err(|e| e.to_string())?;
            for (i, step) in sc.steps.iter().enumerate() {
                let owners = ownership(&m, &s);
                let rec = r.step(i, step).map_err(|e| e.to_string())?;
                requests += 1;
                for d in &rec.decisions {
                    if matches!(d.basis, Basis::Unrestricted | Basis::Unassociated) {
                        continue;
                    }
                    let (table, _) = d.point.kind.domain();
                    let owns = |u: &str| owners[u].get(table).is_some_and(|s| s.contains(&d.value));
                    let own = owns(&step.session);
                    let foreign = !own && owners.keys().any(|u| owns(u));
                    ensure(!(d.allowed() && foreign), || {
                        format!(
                            "{file} seed {seed} step {i}: {} allowed foreign {}",
                            step.session, d.value
                        )
                    })?;
                    ensure(d.allowed() || !own, || {
                        format!(
                            "{file} seed {seed} step {i}: {} denied own {}",
                            step.session, d.value
                        )
                    })?;
                    if d.allowed() {
                        allows += 1;
                    } else {
                        denies += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{requests} requests, {allows} allows, {denies} denies, 0 violations"
    ))
}

fn percentile(sorted: &[Duration], q: f64) -> Duration {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn authorize_latency() -> Outcome {
    let m = model("order.json");
    let s = InMemoryStore::new(m.schema().clone());
    for u in 1..=100 {
        let mut values = Row::new();
        values.insert("id".into(), Scalar::Int(u));
        values.insert("name".into(), Scalar::Str(format!("user{u}")));
        s.apply(&WriteOp::Insert {
            table: "user".into(),
            values,
        })
        .unwrap();
    }
    for id in 1..=10_000 {
        let mut values = Row::new();
        values.insert("id".into(), Scalar::Int(id));
        values.insert("user_id".into(), Scalar::Int(id % 100 + 1));
        values.insert("amount".into(), Scalar::Int(id % 997));
        s.apply(&WriteOp::Insert {
            table: "orders".into(),
            values,
        })
        .unwrap();
    }
    let e = enforcer(&m);
    let point = e.points_for("getOrder", "orderNo")[0].clone();
    let heavy = UserContext::new("heavy").with_claim("uid", 1i64);
    e.cache().insert_all(
        "heavy",
        &point.id(),
        (0..100_000).map(|i| Scalar::Int(1_000_000 + i)),
    );
    let light = UserContext::new("light").with_claim("uid", 2i64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples = Vec::with_capacity(30_000);
    let mut bases: BTreeMap<Basis, usize> = BTreeMap::new();
    for i in 0..30_000 {
        let (user, value) = match i % 3 {
            0 => (&heavy, 1_000_000 + rng.gen_range(0..100_000)),
            1 => (&light, rng.gen_range(0..100) * 100 + 1),
            _ => (&light, rng.gen_range(1..=10_000)),
        };
        let t = Instant::now();
        let d = e
            .authorize(user, &point, &Scalar::Int(value), &s)
            .map_err(|e| e.to_string())?;
        samples.push(t.elapsed());
        *bases.entry(d.basis).or_default() += 1;
    }
    samples.sort();
    let (median, p99) = (percentile(&samples, 0.5), percentile(&samples, 0.99));
    ensure(
        median < Duration::from_millis(1) && p99 < Duration::from_millis(10),
        || format!("median {median:?}, p99 {p99:?}"),
    )?;

    let m = model("blog_all.json");
    let s = store(&m);
    let e = enforcer(&m);
    let sc = random_scenario(&m, &e, &s, 1, 200).map_err(|e| e.to_string())?;
    let report = enforce_and_replay(&m, &e, &s, &sc).map_err(|e| e.to_string())?;
    let unrestricted = report
        .by_basis
        .get(&Basis::Unrestricted)
        .copied()
        .unwrap_or(0);
    ensure(unrestricted > 0 && report.authz_store_reads == 0, || {
        format!(
            "{unrestricted} unrestricted decisions, {} store reads",
            report.authz_store_reads
        )
    })?;
    Ok(format!(
        "median {median:?}, p99 {p99:?} over {bases:?}; {unrestricted} unrestricted checks, 0 reads"
    ))
}

fn stress_equals_serial() -> Outcome {
    let mut compared = 0;
    for run in 0..10 {
        for file in ["order.json", "address.json", "blog.json"] {
            let m = model(file);
            let sc = random_scenario(&m, &enforcer(&m), &store(&m), 100 + run, 200)
                .map_err(|e| e.to_string())?;
            let serial = enforce_and_replay(&m, &enforcer(&m), &store(&m), &sc)
                .map_err(|e| e.to_string())?;
            let stress =
                stress_replay(&m, &enforcer(&m), &store(&m), &sc).map_err(|e| e.to_string())?;
            let multiset = |r: &bolaz_core::harness::ReplayReport| {
                let mut v: Vec<_> = r.verdicts().into_iter().map(|(_, v)| v).collect();
                v.sort();
                v
            };
            let (a, b) = (multiset(&serial), multiset(&stress));
            ensure(a == b, || {
                format!("run {run} {file}: serial and stress verdicts differ")
            })?;
            compared += a.len();
        }
    }
    Ok(format!("10 runs x 3 fixtures, {compared} verdicts equal"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("address search reduction", address_search_reduction),
        ("role taxonomy and statement kinds", role_taxonomy),
        ("merge soundness", merge_soundness),
        ("backtracking equivalence", backtracking_equivalence),
        ("threat modes", threat_modes),
        ("enforcement correctness", enforcement_correctness),
        ("authorize latency", authorize_latency),
        ("stress replay equals serial", stress_equals_serial),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", n + 1);
            }
        }
    }
    println!(
        "{}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
