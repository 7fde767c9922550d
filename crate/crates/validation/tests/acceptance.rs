//! Acceptance suite. Each criterion writes one PASS/FAIL line to stderr
//! and then asserts it.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use yoso::engine::{
    forward, gradient_check, initial_measurements, Activation, GradCheckReport, GradCheckShape, ModelParams,
    Propagation, Task,
};
use yoso::graph::{normalized_laplacian, Graph};
use yoso::io::run::{build_task, heatmap_sweep, load_bundle, run, RunSummary, METRICS_FILE};
use yoso::io::{generate_synthetic, GraphModel, RunConfig, SyntheticSpec, TaskKind};
use yoso::numerics::{
    gaussian_matrix, numerical_rank, random_orthonormal, sym_eigendecompose, Matrix, Purpose, RngStream,
};
use yoso::oracle::{check_error_bound, full_participation_forward, DenseGcn, DenseGcnConfig};
use yoso::recovery::{exhaustive_recover, ista_recover_debiased, RecoveryProblem};
use yoso::sampler::{
    assemble_phi, build_gaussian, build_structure, energy_ratio, estimate_rip, node_scores, random_row_sparse,
    AnchorSampling, SamplerConfig, SamplingOperator, ScoreMode,
};
use yoso::sparse::SparseMatrix;
use yoso::tasks::{accuracy, cosine_scores, hits_at_k};

/// Written straight to the stderr handle rather than through `println!`,
/// which the test harness captures, so every line shows up in a plain
/// `cargo test` log.
fn report(id: u32, name: &str, pass: bool, detail: String, started: Instant) {
    let line = format!(
        "[{}] criterion {id:02} {name}: {detail} ({:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn sbm(block: usize, p_in: f64, p_out: f64, seed: u64) -> yoso::io::DatasetBundle {
    generate_synthetic(&SyntheticSpec::two_block_sbm(block, p_in, p_out), seed).unwrap()
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_gradient_oracle() {
    let started = Instant::now();
    let shape = GradCheckShape::default();
    let reports: Vec<_> = [Activation::Identity, Activation::Relu]
        .into_iter()
        .map(|act| gradient_check(&shape, 50, act, 0).unwrap())
        .collect();
    let fold = |f: fn(&GradCheckReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    let (theta, u, h, entry) = (fold(|r| r.theta), fold(|r| r.u), fold(|r| r.h), fold(|r| r.worst_entry));
    let instances: usize = reports.iter().map(|r| r.instances).sum();
    let secs = started.elapsed().as_secs_f64();
    let pass = theta.max(u).max(h) <= 1e-4 && secs < 30.0;
    report(
        1,
        "gradient oracle",
        pass,
        format!(
            "{instances} instances, max rel err dΘ {theta:.2e} dU {u:.2e} dĤ {h:.2e} (worst single entry {entry:.2e})"
        ),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_full_row_rank() {
    let started = Instant::now();
    let bundle = sbm(100, 0.1, 0.01, 2);
    let a_hat = normalized_laplacian(&bundle.graph);
    let eig = sym_eigendecompose(&a_hat.to_dense()).unwrap();
    let cfg = SamplerConfig::new(32);
    let mut full = 0;
    for seed in 0..100 {
        let op = SamplingOperator::construct_with_eigen(&bundle.graph, &eig, &cfg, seed).unwrap();
        if numerical_rank(&op.phi.to_dense(), 1e-10).unwrap() == 32 {
            full += 1;
        }
    }
    let pass = full == 100 && started.elapsed().as_secs_f64() < 10.0;
    report(
        2,
        "full row rank",
        pass,
        format!("{full}/100 operators have rank 32"),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Ŝ on a 32-node cycle with 24 anchors, taken from the first structure
/// seed that touches every column (the identity needs g(j) > 0 for all j).
fn fully_covering_structure() -> (Graph, SparseMatrix) {
    let n = 32;
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let g = Graph::build(&edges, n).unwrap();
    let profile = node_scores(&normalized_laplacian(&g), ScoreMode::Leverage, 24).unwrap();
    for seed in 0..10_000 {
        let mut rng = RngStream::new(seed, Purpose::Structure);
        let (s_hat, _) = build_structure(&g, &profile, 24, AnchorSampling::WithoutReplacement, &mut rng).unwrap();
        if s_hat.column_counts().iter().all(|&c| c > 0) {
            return (g, s_hat);
        }
    }
    panic!("no fully covering structure found");
}

#[test]
fn criterion_03_energy_isometry() {
    let started = Instant::now();
    let (g, s_hat) = fully_covering_structure();
    let n = g.num_nodes();
    let mut rng = RngStream::new(3, Purpose::Data);
    let u = random_orthonormal(n, &mut rng);
    let mut pool: Vec<usize> = (0..n).collect();
    let h = random_row_sparse(n, 2, 3, &mut pool, &mut rng);
    let draws = 2000;
    let base = RngStream::new(3, Purpose::Gaussian);
    let ratios: Vec<f64> = (0..draws)
        .map(|t| {
            let sigma = build_gaussian(&s_hat, &mut base.derive(t));
            let phi = assemble_phi(&s_hat, &sigma).unwrap();
            energy_ratio(&phi.mul_dense(&u).unwrap(), &h)
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / draws as f64;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    let z = (mean - 1.0).abs() / se;
    let pass = z <= 3.0 && started.elapsed().as_secs_f64() < 30.0;
    report(
        3,
        "energy isometry",
        pass,
        format!("mean ratio {mean:.4} ± {se:.4} (|z| = {z:.2})"),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_rip() {
    let started = Instant::now();
    let bundle = sbm(128, 0.1, 0.01, 4);
    let a_hat = normalized_laplacian(&bundle.graph);
    let op = SamplingOperator::construct(&bundle.graph, &a_hat, &SamplerConfig::new(64), 4).unwrap();
    let mut rng = RngStream::new(4, Purpose::Data);
    let u = random_orthonormal(256, &mut rng);
    let est = estimate_rip(&op.phi, &u, 4, 500, &mut rng).unwrap();
    let ident = estimate_rip(
        &SparseMatrix::identity(256),
        &Matrix::identity(256, 256),
        4,
        500,
        &mut rng,
    )
    .unwrap();
    let pass = est.delta_hat < 1.0 && est.satisfied && ident.delta_hat == 0.0 && started.elapsed().as_secs_f64() < 30.0;
    report(
        4,
        "restricted isometry",
        pass,
        format!(
            "δ̂ = {:.3} (ratios {:.3}..{:.3}), identity control δ̂ = {}",
            est.delta_hat, est.min_ratio, est.max_ratio, ident.delta_hat
        ),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_recovery_oracle() {
    let started = Instant::now();
    let (n, d, k, m) = (16, 2, 2, 10);
    let mut matched = 0;
    let mut worst_err: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = RngStream::new(seed, Purpose::Data);
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        for _ in 0..n {
            edges.push((rng.below(n), rng.below(n)));
        }
        let g = Graph::build(&edges, n).unwrap();
        let op = SamplingOperator::construct(&g, &normalized_laplacian(&g), &SamplerConfig::new(m), seed).unwrap();
        let u = random_orthonormal(n, &mut rng);
        let a = op.phi.mul_dense(&u).unwrap();
        let mut pool: Vec<usize> = (0..n).collect();
        let h_true = random_row_sparse(n, d, k, &mut pool, &mut rng);
        let t = &a * &h_true;
        let lambda_max = (0..n).map(|i| (a.transpose() * &t).row(i).norm()).fold(0.0, f64::max);
        // Small λ approaches the noiseless ℓ2,1 interpolant; ISTA is slow
        // there, so give it room to actually converge.
        let mut problem = RecoveryProblem::new(&t, &a, 1e-4 * lambda_max);
        problem.max_iters = 2_000_000;
        problem.tol = 1e-15;
        let ista = ista_recover_debiased(&problem, 1e-2).unwrap();
        let exact = exhaustive_recover(&t, &a, k).unwrap();
        if ista.support == exact.support {
            matched += 1;
            let err = (&ista.h - &exact.h).norm() / exact.h.norm();
            worst_err = worst_err.max(err);
        }
    }
    let pass = matched >= 95 && worst_err <= 1e-3 && started.elapsed().as_secs_f64() < 60.0;
    report(
        5,
        "recovery vs exhaustive oracle",
        pass,
        format!("{matched}/100 supports match, worst matched rel err {worst_err:.2e}"),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

/// `H ← σ(Â·W·H)` with explicit loops; shares no code with the engine.
fn reference_forward(a: &Matrix, weights: &[Matrix], x: &Matrix, relu: bool) -> Matrix {
    let n = a.nrows();
    let mut h = x.clone();
    for w in weights {
        let mut aw = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                aw[(i, j)] = (0..n).map(|k| a[(i, k)] * w[(k, j)]).sum();
            }
        }
        let mut next = Matrix::zeros(n, h.ncols());
        for i in 0..n {
            for c in 0..h.ncols() {
                let v: f64 = (0..n).map(|j| aw[(i, j)] * h[(j, c)]).sum();
                next[(i, c)] = if relu { v.max(0.0) } else { v };
            }
        }
        h = next;
    }
    h
}

#[test]
fn criterion_06_full_participation_reduction() {
    let started = Instant::now();
    let n = 30;
    let mut rng = RngStream::new(6, Purpose::Data);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..2 * n {
        edges.push((rng.below(n), rng.below(n)));
    }
    let g = Graph::build(&edges, n).unwrap();
    let a_hat = normalized_laplacian(&g);
    let a_dense = a_hat.to_dense();
    let phi = SparseMatrix::identity(n);
    let prop = Propagation::new(&phi, &a_hat).unwrap();
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let act = if draw % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Identity
        };
        let params = ModelParams::init(n, n, 2, &mut rng);
        let x = gaussian_matrix(n, 4, 1.0, &mut rng);
        let t0 = initial_measurements(&phi, &x).unwrap();
        let z = forward(&prop.phi_a, &params, &t0, act).unwrap().z;
        let reference = reference_forward(&a_dense, &params.layers, &x, act == Activation::Relu);
        let oracle = full_participation_forward(&a_hat, &params, &x, act, &phi).unwrap();
        let scale = reference.amax().max(1.0);
        worst = worst
            .max((&z - &reference).amax() / scale)
            .max((&oracle - &reference).amax() / scale);
    }
    let pass = worst <= 1e-12 && started.elapsed().as_secs_f64() < 5.0;
    report(
        6,
        "full-participation reduction",
        pass,
        format!("max deviation {worst:.2e} over 20 draws"),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_error_bound() {
    let started = Instant::now();
    let mut holds = 0;
    let mut applicable = 0;
    let mut lines = Vec::new();
    for seed in 0..20u64 {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            m: 64,
            seed,
            output_dir: tmp.path().into(),
            synthetic: Some(SyntheticSpec::two_block_sbm(128, 0.1, 0.01)),
            ..RunConfig::default()
        };
        let bundle = load_bundle(&cfg).unwrap();
        let task = build_task(&cfg, &bundle).unwrap();
        let mut trainer = yoso::engine::Trainer::new(cfg.hyperparams(), cfg.sampler(), seed).unwrap();
        let out = trainer.train(&bundle.graph, &bundle.features, &task).unwrap();
        let phi = &out.operator.phi;
        let prop = Propagation::new(phi, &out.a_hat).unwrap();
        let z = forward(
            &prop.phi_a,
            &out.params,
            &initial_measurements(phi, &bundle.features).unwrap(),
            cfg.activation,
        )
        .unwrap()
        .z;
        let mut rng = RngStream::new(seed, Purpose::Data).derive(7);
        let rip = estimate_rip(phi, &out.basis.u, 4, 500, &mut rng).unwrap();
        let h_tilde = out.embeddings();
        if rip.delta_hat >= 1.0 {
            let h_ref =
                full_participation_forward(&out.a_hat, &out.params, &bundle.features, cfg.activation, phi).unwrap();
            let measured = (&h_tilde - &h_ref).norm();
            let e_norm = (&z - phi.mul_dense(&h_tilde).unwrap()).norm();
            lines.push(format!(
                "seed {seed}: δ̂ = {:.3} ≥ 1, bound vacuous (measured {measured:.3e}, ‖E‖ {e_norm:.3e})",
                rip.delta_hat
            ));
            continue;
        }
        applicable += 1;
        let h_ref = full_participation_forward(&out.a_hat, &out.params, &bundle.features, cfg.activation, phi).unwrap();
        let rep = check_error_bound(
            &h_ref,
            &h_tilde,
            &z,
            phi,
            &out.basis.u,
            &out.code.h,
            rip.delta_hat,
            cfg.activation.lipschitz(),
            cfg.layers,
        )
        .unwrap();
        if rep.holds {
            holds += 1;
        }
        lines.push(format!(
            "seed {seed}: measured {:.3e} bound {:.3e} (‖E‖ {:.3e}, δ̂ {:.3})",
            rep.measured_error, rep.bound, rep.residual_norm, rep.delta_hat
        ));
    }
    for l in &lines {
        println!("    {l}");
    }
    // A suite in which no seed reaches δ̂ < 1 has checked nothing.
    let pass = applicable > 0 && holds == applicable && started.elapsed().as_secs_f64() < 600.0;
    report(
        7,
        "error bound",
        pass,
        format!("bound holds on {holds}/{applicable} seeds with δ̂ < 1"),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8, 11, 12

fn desk_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        seed: 0,
        output_dir: dir.into(),
        synthetic: Some(SyntheticSpec::two_block_sbm(200, 0.1, 0.01)),
        ..RunConfig::default()
    }
}

struct DeskRun {
    summary: RunSummary,
    metrics: Vec<u8>,
    seconds: f64,
    _dir: tempfile::TempDir,
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let started = Instant::now();
        let summary = run(&desk_config(dir.path())).unwrap();
        let seconds = started.elapsed().as_secs_f64();
        let metrics = fs::read(dir.path().join(METRICS_FILE)).unwrap();
        DeskRun {
            summary,
            metrics,
            seconds,
            _dir: dir,
        }
    })
}

#[test]
fn criterion_08_desk_accuracy() {
    let started = Instant::now();
    let desk = desk_run();
    let cfg = desk_config(std::path::Path::new("unused"));
    let bundle = load_bundle(&cfg).unwrap();
    let labels = bundle.labels.as_ref().unwrap();
    let dense = DenseGcn::train_node_classifier(
        &bundle.graph,
        &bundle.features,
        labels,
        2,
        &bundle.splits.train,
        &DenseGcnConfig::default(),
    )
    .unwrap();
    let truth: Vec<usize> = bundle.splits.test.iter().map(|&i| labels[i]).collect();
    let dense_acc = accuracy(&dense.predict(&bundle.features, &bundle.splits.test).unwrap(), &truth).unwrap();
    let acc = desk.summary.test.value;
    let invocations = desk.summary.timing.sampling_invocations;
    let pass = acc >= 0.90 && (acc - dense_acc).abs() <= 0.02 && invocations == 1 && desk.seconds < 300.0;
    report(
        8,
        "desk-scale accuracy",
        pass,
        format!(
            "YOSO test accuracy {acc:.3}, dense GCN {dense_acc:.3}, sampling invocations {invocations}, run {:.1}s",
            desk.seconds
        ),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_11_orthonormality() {
    let started = Instant::now();
    let residuals = &desk_run().summary.outcome.history.basis_residuals;
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let pass = !residuals.is_empty() && worst <= 1e-8;
    report(
        11,
        "orthonormality",
        pass,
        format!("max ‖UᵀU − I‖_F {worst:.2e} over {} epochs", residuals.len()),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_12_determinism() {
    let started = Instant::now();
    let first = &desk_run().metrics;
    let dir = tempfile::tempdir().unwrap();
    run(&desk_config(dir.path())).unwrap();
    let second = fs::read(dir.path().join(METRICS_FILE)).unwrap();
    let pass = *first == second;
    report(
        12,
        "determinism",
        pass,
        format!("metrics.csv {} bytes, identical: {pass}", first.len()),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

/// Hits@10 of YOSO and of the dense GCN on the held-out edges of `model`.
fn link_comparison(model: GraphModel) -> (f64, f64, usize) {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::new(model);
    spec.link_holdout = Some(0.1);
    let cfg = RunConfig {
        task: TaskKind::LinkPred,
        seed: 9,
        output_dir: dir.path().into(),
        synthetic: Some(spec),
        ..RunConfig::default()
    };
    let summary = run(&cfg).unwrap();
    let bundle = load_bundle(&cfg).unwrap();
    let Task::Link(task) = build_task(&cfg, &bundle).unwrap() else {
        unreachable!()
    };
    let dense =
        DenseGcn::train_link_model(&bundle.graph, &bundle.features, &task.loss, &DenseGcnConfig::default()).unwrap();
    let links = bundle.links.as_ref().unwrap();
    let hits = |pos: Vec<f64>, neg: Vec<f64>| hits_at_k(&pos, &neg, 10).unwrap();
    let dense_hits = hits(
        dense.link_scores(&bundle.features, &links.pos_test).unwrap(),
        dense.link_scores(&bundle.features, &links.neg_test).unwrap(),
    );
    let emb = summary.outcome.embeddings();
    let yoso_hits = hits(
        cosine_scores(&emb, &links.pos_test).unwrap(),
        cosine_scores(&emb, &links.neg_test).unwrap(),
    );
    (yoso_hits, dense_hits, links.pos_test.len())
}

#[test]
fn criterion_09_link_prediction() {
    let started = Instant::now();
    // Eight communities, so that most negative pairs cross a community
    // boundary and Hits@10 can separate a good model from a poor one.
    let (yoso_hits, dense_hits, held_out) = link_comparison(GraphModel::Sbm {
        block_sizes: vec![25; 8],
        p_in: 0.3,
        p_out: 0.01,
    });
    // With two communities half the negatives share a community with their
    // endpoints; reported for reference only.
    let (two_yoso, two_dense, _) = link_comparison(GraphModel::Sbm {
        block_sizes: vec![100; 2],
        p_in: 0.15,
        p_out: 0.01,
    });
    let pass = yoso_hits >= dense_hits - 0.05 && started.elapsed().as_secs_f64() < 300.0;
    report(
        9,
        "link prediction",
        pass,
        format!(
            "Hits@10 YOSO {yoso_hits:.3}, dense GCN {dense_hits:.3} on 8 communities ({held_out} held-out edges); \
             2 communities for reference: YOSO {two_yoso:.3}, dense GCN {two_dense:.3}"
        ),
        started,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_heatmap_trend() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    let ms = [16, 32, 64, 128];
    let maps = heatmap_sweep(&cfg, &ms).unwrap();
    let means: Vec<f64> = maps.iter().map(|(_, m)| m.mean()).collect();
    let nonincreasing = means.windows(2).all(|w| w[1] <= w[0]);
    let plateau = means[2] / means[3];
    let shared_sample: HashSet<_> = maps.iter().map(|(_, m)| (m.nodes.clone(), m.dims.clone())).collect();
    let pass = nonincreasing && plateau >= 0.5 && started.elapsed().as_secs_f64() < 600.0;
    report(
        10,
        "heatmap trend",
        pass,
        format!(
            "mean |H_ref − UĤ| at M={ms:?}: {:?}, value@64/value@128 = {plateau:.3}, {} node/dim sample(s)",
            means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            shared_sample.len()
        ),
        started,
    );
    assert!(pass);
}
