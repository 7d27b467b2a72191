//! Invariant suite run by `graphtune selfcheck` and the acceptance target.
//!
//! Feature operators are compared against deliberately naive dense
//! re-implementations on small random graphs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{
    gen_eigen, gen_graphlet, gen_ldp, gen_pagerank, graph_stats, heat_time_grid, netlsd_heat, EigenSource, PageRankParams, DEFAULT_DENSE_EIGEN_CAP,
    DEFAULT_GRAPHLET_BUDGET,
};
use crate::graph::{build_graph, normalized_adjacency, planetoid_style_split, Dataset, Graph, SplitMasks};
use crate::hpo::{run_hpo, FakeClock, HpoConfig, HyperParamSpec, Method, Scale, SearchSpace};
use crate::nn::{model_suite, primitive_suite, Family};
use crate::solver::{solve, EnsembleMethod, ModelEntry, SolverConfig, SplitConfig, Task};
use crate::synthetic::sbm_node_dataset;
use crate::train::TrainConfig;

pub const ORACLE_INSTANCES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Up to `max_n` nodes, random density, occasional self loops.
pub fn random_small_graph(rng: &mut ChaCha8Rng, max_n: usize, loops: bool) -> Graph {
    let n = rng.gen_range(1..=max_n);
    let p = rng.gen_range(0.05..0.95);
    let mut edges = Vec::new();
    for u in 0..n {
        if loops && rng.gen_bool(0.1) {
            edges.push((u, u));
        }
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    build_graph(n, &edges, true).expect("valid random graph")
}

fn dense_adj(g: &Graph) -> DMatrix<f64> {
    let n = g.num_nodes();
    DMatrix::from_fn(n, n, |i, j| if g.has_edge(i, j) { 1.0 } else { 0.0 })
}

/// Runs `check` on `instances` random graphs; reports the first failure.
fn oracle<F>(name: &str, instances: usize, seed: u64, loops: bool, mut check: F) -> CheckResult
where
    F: FnMut(&Graph) -> Result<f64, String>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let g = random_small_graph(&mut rng, 10, loops);
        match check(&g) {
            Ok(err) => worst = worst.max(err),
            Err(msg) => return CheckResult::new(name, false, format!("instance {i} (n={}): {msg}", g.num_nodes())),
        }
    }
    CheckResult::new(name, true, format!("{instances} graphs, max err {worst:.2e}"))
}

fn compare(got: f64, want: f64, tol: f64, what: &str) -> Result<f64, String> {
    let err = (got - want).abs();
    if err <= tol * want.abs().max(1.0) {
        Ok(err)
    } else {
        Err(format!("{what}: got {got}, oracle {want}"))
    }
}

fn connected(adj: &[Vec<bool>], nodes: &[usize]) -> bool {
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..nodes.len() {
            if !seen[j] && adj[nodes[i]][nodes[j]] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Isomorphism class from the sorted degree sequence of the induced subgraph.
fn class_by_degrees(adj: &[Vec<bool>], nodes: &[usize]) -> Option<usize> {
    let mut degs: Vec<usize> = nodes.iter().map(|&u| nodes.iter().filter(|&&w| w != u && adj[u][w]).count()).collect();
    degs.sort_unstable();
    match degs.as_slice() {
        [2, 2, 2] => Some(0),
        [1, 1, 2] => Some(1),
        [1, 1, 2, 2] => Some(2),
        [1, 1, 1, 3] => Some(3),
        [2, 2, 2, 2] => Some(4),
        [1, 2, 2, 3] => Some(5),
        [2, 2, 3, 3] => Some(6),
        [3, 3, 3, 3] => Some(7),
        _ => None,
    }
}

fn graphlet_oracle(g: &Graph) -> Vec<[f64; 8]> {
    let n = g.num_nodes();
    let adj: Vec<Vec<bool>> = (0..n).map(|u| (0..n).map(|v| u != v && g.has_edge(u, v)).collect()).collect();
    let mut counts = vec![[0.0; 8]; n];
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones();
        if size != 3 && size != 4 {
            continue;
        }
        let nodes: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) != 0).collect();
        if !connected(&adj, &nodes) {
            continue;
        }
        let c = class_by_degrees(&adj, &nodes).expect("connected 3/4-node subgraph");
        for &v in &nodes {
            counts[v][c] += 1.0;
        }
    }
    counts
}

pub fn check_graphlets(instances: usize, seed: u64) -> CheckResult {
    oracle("oracle graphlets", instances, seed, false, |g| {
        let got = gen_graphlet(g, 4, DEFAULT_GRAPHLET_BUDGET).map_err(|e| e.to_string())?;
        for (v, want) in graphlet_oracle(g).iter().enumerate() {
            if got.row(v) != want {
                return Err(format!("node {v}: got {:?}, oracle {want:?}", got.row(v)));
            }
        }
        Ok(0.0)
    })
}

pub fn check_ldp(instances: usize, seed: u64) -> CheckResult {
    oracle("oracle ldp", instances, seed ^ 1, true, |g| {
        let a = dense_adj(g);
        let n = g.num_nodes();
        let deg: Vec<f64> = (0..n).map(|v| a.row(v).sum()).collect();
        let got = gen_ldp(g);
        let mut worst = 0.0f64;
        for v in 0..n {
            let nb: Vec<f64> = (0..n).filter(|&u| a[(v, u)] != 0.0).map(|u| deg[u]).collect();
            let want = if nb.is_empty() {
                [deg[v], 0.0, 0.0, 0.0, 0.0]
            } else {
                let k = nb.len() as f64;
                let mean = nb.iter().sum::<f64>() / k;
                let sq = nb.iter().map(|d| d * d).sum::<f64>() / k;
                let min = nb.iter().copied().reduce(f64::min).unwrap();
                let max = nb.iter().copied().reduce(f64::max).unwrap();
                [deg[v], min, max, mean, (sq - mean * mean).max(0.0).sqrt()]
            };
            for (c, &w) in want.iter().enumerate() {
                worst = worst.max(compare(got.get(v, c), w, 1e-9, &format!("node {v} col {c}"))?);
            }
        }
        Ok(worst)
    })
}

pub fn check_pagerank(instances: usize, seed: u64) -> CheckResult {
    let params = PageRankParams::default();
    oracle("oracle pagerank", instances, seed ^ 2, true, |g| {
        let n = g.num_nodes();
        let a = dense_adj(g);
        let nf = n as f64;
        // column-stochastic transition; dangling columns teleport uniformly
        let mut p = DMatrix::<f64>::zeros(n, n);
        for v in 0..n {
            let d = a.row(v).sum();
            for u in 0..n {
                p[(u, v)] = if d > 0.0 { a[(v, u)] / d } else { 1.0 / nf };
            }
        }
        let lhs = DMatrix::<f64>::identity(n, n) - p * params.damping;
        let rhs = DVector::from_element(n, (1.0 - params.damping) / nf);
        let want = lhs.lu().solve(&rhs).ok_or("singular system")?;
        let got = gen_pagerank(g, params).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for v in 0..n {
            worst = worst.max(compare(got.get(v, 0), want[v], 1e-8, &format!("node {v}"))?);
        }
        Ok(worst)
    })
}

pub fn check_graph_stats(instances: usize, seed: u64) -> CheckResult {
    oracle("oracle graph_stats", instances, seed ^ 3, true, |g| {
        let n = g.num_nodes();
        let a = dense_adj(g);
        let nf = n as f64;
        let loops = (0..n).filter(|&v| a[(v, v)] != 0.0).count() as f64;
        let m = (a.sum() - loops) / 2.0 + loops;
        let deg: Vec<f64> = (0..n).map(|v| a.row(v).sum()).collect();
        let mut s = a.clone();
        s.fill_diagonal(0.0);
        let s3 = &s * &s * &s;
        let mut clustering = 0.0;
        let mut wedges = 0.0;
        for v in 0..n {
            let k = s.row(v).sum();
            if k >= 2.0 {
                clustering += s3[(v, v)] / (k * (k - 1.0));
            }
            wedges += k * (k - 1.0) / 2.0;
        }
        let triangles = s3.trace() / 6.0;
        let want = [
            ("num_nodes", nf),
            ("num_edges", m),
            ("density", if n > 1 { m / (nf * (nf - 1.0) / 2.0) } else { 0.0 }),
            ("mean_degree", deg.iter().sum::<f64>() / nf),
            ("max_degree", deg.iter().copied().fold(0.0, f64::max)),
            ("avg_clustering", clustering / nf),
            ("transitivity", if wedges > 0.0 { 3.0 * triangles / wedges } else { 0.0 }),
        ];
        let got = graph_stats(g);
        let mut worst = 0.0f64;
        for (name, w) in want {
            let x = got.get(name).ok_or_else(|| format!("missing {name}"))?;
            worst = worst.max(compare(x, w, 1e-12, name)?);
        }
        Ok(worst)
    })
}

pub fn check_netlsd(instances: usize, seed: u64) -> CheckResult {
    let times = heat_time_grid();
    oracle("oracle netlsd", instances, seed ^ 4, true, |g| {
        let n = g.num_nodes();
        let a = dense_adj(g);
        let deg: Vec<f64> = (0..n).map(|v| a.row(v).sum()).collect();
        let l = DMatrix::from_fn(n, n, |i, j| {
            if deg[i] == 0.0 || deg[j] == 0.0 {
                0.0
            } else {
                (if i == j { 1.0 } else { 0.0 }) - a[(i, j)] / (deg[i] * deg[j]).sqrt()
            }
        });
        let got = netlsd_heat(g, &times, DEFAULT_DENSE_EIGEN_CAP).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for (i, &t) in times.iter().enumerate() {
            let want = (&l * -t).exp().trace();
            worst = worst.max(compare(got.values[i], want, 1e-7, &format!("t={t:.4}"))?);
        }
        Ok(worst)
    })
}

pub fn check_eigen(instances: usize, seed: u64) -> CheckResult {
    oracle("oracle eigen", instances, seed ^ 5, true, |g| {
        let n = g.num_nodes();
        let a = dense_adj(g);
        let k = 1 + n / 2;
        let (vecs, vals) = gen_eigen(g, k, EigenSource::Adjacency).map_err(|e| e.to_string())?;
        if vecs.cols != k.min(n) || vals.len() != vecs.cols {
            return Err(format!("shape {}x{} for k={k}", vecs.rows, vecs.cols));
        }
        let v = DMatrix::from_fn(n, vecs.cols, |r, c| vecs.get(r, c));
        let mut worst = 0.0f64;
        let gram = v.transpose() * &v;
        for i in 0..vecs.cols {
            for j in 0..vecs.cols {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max(compare(gram[(i, j)], want, 1e-8, "orthonormality")?);
            }
            let residual = (&a * v.column(i) - v.column(i) * vals[i]).amax();
            worst = worst.max(compare(residual, 0.0, 1e-8, &format!("A v = λ v for column {i}"))?);
            let col = v.column(i);
            let lead = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() + 1e-9 { x } else { m });
            if lead < 0.0 {
                return Err(format!("column {i} leading entry is negative"));
            }
        }
        // singular values of a symmetric matrix are |λ|; SVD takes a separate code path
        let svd = a.clone().try_svd(false, false, f64::EPSILON, 10_000).ok_or("svd did not converge")?;
        let mut mags: Vec<f64> = svd.singular_values.iter().copied().collect();
        mags.sort_by(|x, y| y.total_cmp(x));
        for (i, &l) in vals.iter().enumerate() {
            worst = worst.max(compare(l.abs(), mags[i], 1e-8, &format!("|λ_{i}|"))?);
        }
        Ok(worst)
    })
}

pub fn check_normalized_adjacency(instances: usize, seed: u64) -> CheckResult {
    oracle("oracle normalized adjacency", instances, seed ^ 6, true, |g| {
        let n = g.num_nodes();
        let mut a = dense_adj(g);
        a.fill_diagonal(1.0);
        let d: Vec<f64> = (0..n).map(|v| a.row(v).sum()).collect();
        let s = normalized_adjacency(g, true).map_err(|e| e.to_string())?;
        let got = s.to_dense();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = a[(i, j)] / (d[i] * d[j]).sqrt();
                worst = worst.max(compare(got[i * n + j], want, 1e-12, &format!("entry ({i},{j})"))?);
            }
        }
        Ok(worst)
    })
}

pub fn oracle_suite(instances: usize, seed: u64) -> Vec<CheckResult> {
    vec![
        check_graphlets(instances, seed),
        check_ldp(instances, seed),
        check_pagerank(instances, seed),
        check_graph_stats(instances, seed),
        check_netlsd(instances, seed),
        check_eigen(instances, seed),
        check_normalized_adjacency(instances, seed),
    ]
}

/// One line per primitive and per model family.
pub fn gradient_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (prefix, suite) in [("gradcheck primitive", primitive_suite(seed)), ("gradcheck model", model_suite(seed))] {
        match suite {
            Ok(reports) => {
                for (name, r) in reports {
                    out.push(CheckResult::new(&format!("{prefix} {name}"), r.passed(), format!("max rel err {:.2e} over {} entries", r.max_rel_err, r.entries_checked)));
                }
            }
            Err(e) => out.push(CheckResult::new(prefix, false, e.to_string())),
        }
    }
    out
}

fn quadratic(x: f64, y: f64) -> f64 {
    -((x - 0.3).powi(2) + (y - 0.7).powi(2))
}

/// Best score of a 50-trial search on the 2-D quadratic.
pub fn quadratic_best(method: Method, seed: u64, trials: usize) -> Result<f64, String> {
    let space = SearchSpace::new(vec![HyperParamSpec::numerical("x", 0.0, 1.0, Scale::Linear), HyperParamSpec::numerical("y", 0.0, 1.0, Scale::Linear)])
        .map_err(|e| e.to_string())?;
    let cfg = HpoConfig { method, n_trials: trials, seed, ..HpoConfig::default() };
    let run = run_hpo(
        |a, _| {
            let get = |k: &str| a[k].as_f64().ok_or_else(|| format!("{k} not numeric"));
            Ok(quadratic(get("x")?, get("y")?))
        },
        &space,
        &cfg,
        &FakeClock::default(),
    )
    .map_err(|e| e.to_string())?;
    Ok(run.best.score)
}

/// TPE matches or beats random search on at least 60% of paired seeds.
pub fn tpe_sanity(seeds: usize, trials: usize) -> CheckResult {
    let name = "tpe beats random on 2-D quadratic";
    let mut wins = 0;
    for s in 0..seeds as u64 {
        let seed = 1000 + s;
        match (quadratic_best(Method::Tpe, seed, trials), quadratic_best(Method::Random, seed, trials)) {
            (Ok(t), Ok(r)) => wins += usize::from(t >= r),
            (Err(e), _) | (_, Err(e)) => return CheckResult::new(name, false, e),
        }
    }
    let pass = wins * 10 >= seeds * 6;
    CheckResult::new(name, pass, format!("tpe >= random in {wins}/{seeds} seeds"))
}

fn fixture_config(ensemble: EnsembleMethod) -> SolverConfig {
    let space = SearchSpace::new(vec![
        HyperParamSpec::integer("hidden_dim", 8, 32, Scale::Log),
        HyperParamSpec::numerical("lr", 1e-3, 5e-2, Scale::Log),
        HyperParamSpec::numerical("dropout", 0.2, 0.6, Scale::Linear),
    ])
    .expect("valid space");
    SolverConfig {
        hpo: HpoConfig { n_trials: 3, n_startup: 2, ..HpoConfig::default() },
        ensemble,
        split: SplitConfig { per_class: 10, n_val: 30, n_test: 60 },
        train: TrainConfig { max_epochs: 30, patience: 10, ..TrainConfig::default() },
        seed: 11,
        ..SolverConfig::new(Task::Node, vec![ModelEntry::new(Family::Gcn).with_space(space.clone()), ModelEntry::new(Family::Sage).with_space(space)])
    }
}

/// Two seeded runs serialize to the same `results.json` once timings are zeroed.
pub fn determinism_check() -> CheckResult {
    let name = "deterministic results.json";
    let run = || -> Result<String, String> {
        let ds = Dataset::Node(sbm_node_dataset(150, 3, 0.15, 0.01, 10, 0.8, 3).map_err(|e| e.to_string())?);
        let out = solve(&ds, &fixture_config(EnsembleMethod::Voting)).map_err(|e| e.to_string())?;
        out.report.without_timings().to_json().map_err(|e| e.to_string())
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) if a == b => CheckResult::new(name, true, format!("{} identical bytes", a.len())),
        (Ok(_), Ok(_)) => CheckResult::new(name, false, "reports differ".into()),
        (Err(e), _) | (_, Err(e)) => CheckResult::new(name, false, e),
    }
}

/// Relabeling test nodes moves only the reported test numbers.
pub fn hygiene_check() -> CheckResult {
    let name = "test-set hygiene";
    let run = || -> Result<(bool, String), String> {
        let d = sbm_node_dataset(150, 3, 0.15, 0.01, 10, 0.8, 3).map_err(|e| e.to_string())?;
        let masks = planetoid_style_split(&d.labels, 10, 30, 60, 11).map_err(|e| e.to_string())?;
        let mut clean = d.clone();
        clean.masks = Some(masks.clone());
        let mut flipped = clean.clone();
        for v in SplitMasks::indices(&masks.test) {
            flipped.labels[v] = (flipped.labels[v] + 1) % d.num_classes;
        }
        let cfg = fixture_config(EnsembleMethod::StackingGlm);
        let a = solve(&Dataset::Node(clean), &cfg).map_err(|e| e.to_string())?.report;
        let b = solve(&Dataset::Node(flipped), &cfg).map_err(|e| e.to_string())?.report;
        if a.leaderboard != b.leaderboard {
            return Ok((false, "leaderboard changed".into()));
        }
        for (x, y) in a.models.iter().zip(&b.models) {
            let scores = |m: &crate::solver::ModelReport| m.trials.iter().map(|t| (t.assignment.clone(), t.score)).collect::<Vec<_>>();
            if scores(x) != scores(y) {
                return Ok((false, format!("{}: trial history changed", x.name)));
            }
        }
        let (ea, eb) = (a.ensemble.as_ref().map(|e| e.val), b.ensemble.as_ref().map(|e| e.val));
        if ea != eb {
            return Ok((false, "ensemble validation accuracy changed".into()));
        }
        let test_moved = a.models.iter().zip(&b.models).any(|(x, y)| x.best.as_ref().map(|b| b.test) != y.best.as_ref().map(|b| b.test));
        Ok((true, format!("selection unchanged; test numbers moved: {test_moved}")))
    };
    match run() {
        Ok((pass, detail)) => CheckResult::new(name, pass, detail),
        Err(e) => CheckResult::new(name, false, e),
    }
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = gradient_suite(seed);
    out.extend(oracle_suite(ORACLE_INSTANCES, seed));
    out.push(tpe_sanity(20, 50));
    out.push(determinism_check());
    out.push(hygiene_check());
    out
}
