//! Mode dispatch and artifact writing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use cournot_core::best_response::stage_minimize;
use cournot_core::verification::{grid_oracle_stage, monotonicity_probe, potential_loop_probe, separable_loop_probe};
use cournot_core::{
    best_response_affine, certify, solve_by_iteration, solve_quadratic, verify_equilibrium, wasserstein1,
    ContractionCertificate, CostSpec, DiscreteMeasure, EquilibriumResult, ErrorKind, IterationOptions, MeanFieldCost,
    PriceImpactParams, QuadraticMeanFieldCost, ScenarioTree, SolverOptions,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{default_example_params, load_candidate, load_measure, load_tree, ConfigError, Mode, RunConfig};

/// How a run that produced its artifacts ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Artifacts were written but the solve or check missed its tolerance.
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::NotConverged => 4,
        }
    }
}

/// 2 for configuration and input errors, 3 for domain errors, 4 for
/// numerical non-convergence, 1 for anything else (e.g. unwritable output).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<cournot_core::Error>() {
            return match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Domain => 3,
                ErrorKind::Convergence => 4,
            };
        }
    }
    1
}

struct Run<'a> {
    config: &'a RunConfig,
    base: &'a Path,
    out: &'a Path,
}

pub fn run(config: &RunConfig, base: &Path, out: &Path) -> anyhow::Result<Status> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let run = Run { config, base, out };
    match config.mode {
        Mode::Certify => run.certify(),
        Mode::SolveIter => run.solve_iter(),
        Mode::SolveQuadratic => run.solve_quadratic(),
        Mode::Verify => run.verify(),
        Mode::Oracle => run.oracle(),
        Mode::LoopProbe => run.loop_probe(),
        Mode::ExampleN2 => run.example_n2(),
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Certify => "certify",
        Mode::SolveIter => "solve_iter",
        Mode::SolveQuadratic => "solve_quadratic",
        Mode::Verify => "verify",
        Mode::Oracle => "oracle",
        Mode::LoopProbe => "loop_probe",
        Mode::ExampleN2 => "example_n2",
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

impl Run<'_> {
    fn write(&self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn cost(&self) -> anyhow::Result<QuadraticMeanFieldCost> {
        let spec = self
            .config
            .cost
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid(format!("mode {} needs a cost", mode_name(self.config.mode))))?;
        Ok(spec.build()?)
    }

    /// Tree and cost, checked against each other.
    fn problem(&self) -> anyhow::Result<(ScenarioTree, QuadraticMeanFieldCost)> {
        let source = self
            .config
            .tree
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid(format!("mode {} needs a tree", mode_name(self.config.mode))))?;
        let tree = load_tree(source, self.base)?;
        let cost = self.cost()?;
        if cost.dim() != tree.horizon() {
            return Err(cournot_core::Error::DimensionMismatch { expected: tree.horizon(), got: cost.dim() }.into());
        }
        Ok((tree, cost))
    }

    /// Write the certificate; under `strict`, refuse to go on if it fails.
    fn certificate(&self, cost: &QuadraticMeanFieldCost) -> anyhow::Result<ContractionCertificate> {
        let cert = certify(cost, cost.dim())?;
        self.write_json("certificate.json", &cert)?;
        if self.config.strict && !cert.passes() {
            return Err(cournot_core::Error::Domain(format!(
                "strict mode: contraction certificate fails (rho = {})",
                cert.rho
            ))
            .into());
        }
        Ok(cert)
    }

    fn iteration_options(&self) -> IterationOptions {
        IterationOptions {
            tol: self.config.tol,
            max_iter: self.config.max_iter,
            damping: self.config.damping,
            ..IterationOptions::default()
        }
    }

    fn solve_summary(&self, res: &EquilibriumResult, cert: &ContractionCertificate) -> serde_json::Value {
        json!({
            "mode": mode_name(self.config.mode),
            "method": res.method,
            "converged": res.converged,
            "iterations": res.iterations,
            "final_gap": res.gaps.last(),
            "tol": self.config.tol,
            "seed": self.config.seed,
            "means": res.means(),
            "value": res.value,
            "rho": cert.rho,
            "certificate_passes": cert.passes(),
            "nu_hat": res.nu_hat,
            "map": res.map,
        })
    }

    fn report_solve(&self, res: &EquilibriumResult) -> Status {
        println!(
            "{}: converged = {}, iterations = {}, final gap = {:e}",
            mode_name(self.config.mode),
            res.converged,
            res.iterations,
            res.gaps.last().copied().unwrap_or(f64::NAN)
        );
        println!("means = {:?}, value = {}", res.means(), res.value);
        if res.converged {
            Status::Ok
        } else {
            Status::NotConverged
        }
    }

    fn certify(&self) -> anyhow::Result<Status> {
        let cost = self.cost()?;
        if let Some(source) = &self.config.tree {
            let tree = load_tree(source, self.base)?;
            if tree.horizon() != cost.dim() {
                return Err(cournot_core::Error::DimensionMismatch { expected: tree.horizon(), got: cost.dim() }.into());
            }
        }
        let cert = certify(&cost, cost.dim())?;
        self.write_json("certificate.json", &cert)?;
        self.write_json("result.json", &json!({ "mode": "certify", "passes": cert.passes(), "certificate": cert }))?;
        print!("{}", cert.table());
        println!("certificate: {}", verdict(cert.passes()));
        if self.config.strict && !cert.passes() {
            return Err(cournot_core::Error::Domain("strict mode: contraction certificate fails".into()).into());
        }
        Ok(Status::Ok)
    }

    fn solve_iter(&self) -> anyhow::Result<Status> {
        let (tree, cost) = self.problem()?;
        let cert = self.certificate(&cost)?;
        let nu0 = match &self.config.nu0 {
            Some(source) => load_measure(source, self.base)?,
            None => DiscreteMeasure::from_tree(&tree),
        };
        let res = solve_by_iteration(&tree, &cost, &nu0, &self.iteration_options())?;
        self.write("trace.csv", &res.trace_csv())?;
        self.write_json("result.json", &self.solve_summary(&res, &cert))?;
        Ok(self.report_solve(&res))
    }

    fn solve_quadratic(&self) -> anyhow::Result<Status> {
        let (tree, cost) = self.problem()?;
        let cert = self.certificate(&cost)?;
        let res = solve_quadratic(&tree, &cost)?;
        let affine = best_response_affine(&tree, &cost, &res.means())?;
        self.write("trace.csv", &res.trace_csv())?;
        self.write("policy.csv", &affine.policy.to_csv())?;
        let mut summary = self.solve_summary(&res, &cert);
        let n = tree.horizon();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| affine.psi_matrix.row(i).iter().copied().collect()).collect();
        summary["psi_matrix"] = json!(rows);
        summary["psi_offset"] = json!(affine.psi_offset.as_slice());
        self.write_json("result.json", &summary)?;
        Ok(self.report_solve(&res))
    }

    fn verify(&self) -> anyhow::Result<Status> {
        let (tree, cost) = self.problem()?;
        let source = self
            .config
            .candidate
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("mode verify needs a candidate".into()))?;
        let candidate = load_candidate(source, self.base)?;
        let report = verify_equilibrium(
            &tree,
            &cost,
            &candidate.nu_hat,
            &candidate.map,
            self.config.tol,
            &SolverOptions::default(),
        )?;
        self.write_json("result.json", &json!({ "mode": "verify", "report": report }))?;
        println!(
            "W1 residual = {:e}, max stationarity = {:e}, map deviation = {:e}",
            report.w1_residual, report.max_stationarity, report.map_deviation
        );
        println!("equilibrium check at tol {:e}: {}", report.tol, verdict(report.passed));
        Ok(if report.passed { Status::Ok } else { Status::NotConverged })
    }

    fn oracle(&self) -> anyhow::Result<Status> {
        let (tree, cost) = self.problem()?;
        let nu = match &self.config.nu0 {
            Some(source) => load_measure(source, self.base)?,
            None => DiscreteMeasure::from_tree(&tree),
        };
        let stats = cost.measure_stats(&nu);
        let grid = self.config.grid_spec()?;
        let opts = SolverOptions::default();
        let mut rows = Vec::new();
        let mut all_within = true;
        for &root in tree.roots() {
            let newton = stage_minimize(&tree, &cost, &stats, root, &[], &opts)?;
            let oracle = grid_oracle_stage(&tree, &cost, &stats, root, &[], grid)?;
            let gap = (newton.y_star - oracle.y_grid).abs();
            let within = gap <= grid.spacing();
            all_within &= within;
            println!(
                "node {root}: newton {:.10}  grid {:.10}  gap {gap:.2e}  {}",
                newton.y_star,
                oracle.y_grid,
                verdict(within)
            );
            rows.push(json!({ "node": root, "newton": newton.y_star, "grid": oracle.y_grid, "gap": gap, "within_step": within }));
        }
        let probe = monotonicity_probe(self.config.seed, self.config.trials);
        println!(
            "monotonicity probe ({} pairs, seed {}): min integral {:e}  {}",
            probe.trials,
            probe.seed,
            probe.min_integral,
            verdict(probe.all_positive)
        );
        self.write_json(
            "result.json",
            &json!({
                "mode": "oracle",
                "grid": { "lo": grid.lo, "hi": grid.hi, "step": grid.spacing() },
                "stages": rows,
                "oracle_agrees": all_within,
                "monotonicity": probe,
            }),
        )?;
        Ok(Status::Ok)
    }

    /// Price-impact parameters of the config when it has a two-stage
    /// price-impact cost, else the default example.
    fn example_params(&self) -> (PriceImpactParams, &'static str) {
        match &self.config.cost {
            Some(CostSpec::PriceImpact { params, .. }) if params.n == 2 => (*params, "config"),
            _ => (default_example_params(), "default"),
        }
    }

    fn loop_probe(&self) -> anyhow::Result<Status> {
        let t = self.config.t_param;
        let (params, _) = self.example_params();
        let cross = potential_loop_probe(t);
        let separable = separable_loop_probe(t, &params)?;
        println!(
            "cross term m_1 y_2: segments {:?}, loop discrepancy {}",
            cross.segment_integrals, cross.loop_discrepancy
        );
        println!(
            "separable part: segments {:?}, loop discrepancy {:e}",
            separable.segment_integrals, separable.loop_discrepancy
        );
        let non_potential = (cross.loop_discrepancy - t).abs() <= 1e-9;
        let separable_closes = separable.loop_discrepancy.abs() <= 1e-9;
        println!("cross-term discrepancy equals T: {}", verdict(non_potential));
        println!("separable part closes: {}", verdict(separable_closes));
        self.write_json(
            "result.json",
            &json!({ "mode": "loop_probe", "T_param": t, "params": params, "cross_term": cross, "separable": separable }),
        )?;
        Ok(Status::Ok)
    }

    fn example_n2(&self) -> anyhow::Result<Status> {
        let (params, origin) = self.example_params();
        let tree = ScenarioTree::bernoulli(2)?;
        let base = cournot_core::price_impact_cost(&params)?;
        let opts = self.iteration_options();
        let start = DiscreteMeasure::from_tree(&tree);
        let mut table = String::from("eps,m_1,m_2,m_1_iter,m_2_iter,w1_between,iterations\n");
        let mut rows = Vec::new();
        let mut status = Status::Ok;
        println!(
            "two-stage Bernoulli example ({origin} parameters K = {}, A = {}, S0 = {}, Q0 = {})",
            params.k, params.a, params.s0, params.q0
        );
        println!("{:>10} {:>18} {:>18} {:>12} {:>6}", "eps", "m_1", "m_2", "W1(lin,iter)", "iters");
        for &eps in &self.config.eps_values {
            let cost = base.scaled(eps)?;
            let lin = solve_quadratic(&tree, &cost)?;
            let iter = solve_by_iteration(&tree, &cost, &start, &opts)?;
            if !(lin.converged && iter.converged) {
                status = Status::NotConverged;
            }
            let gap = wasserstein1(&lin.nu_hat, &iter.nu_hat)?;
            let (m, mi) = (lin.means(), iter.means());
            println!("{eps:>10e} {:>18.15} {:>18.15} {gap:>12.2e} {:>6}", m[0], m[1], iter.iterations);
            let _ = writeln!(table, "{eps},{},{},{},{},{gap},{}", m[0], m[1], mi[0], mi[1], iter.iterations);
            rows.push(json!({
                "eps": eps,
                "means": m,
                "means_iteration": mi,
                "w1_between": gap,
                "iterations": iter.iterations,
                "converged": lin.converged && iter.converged,
            }));
        }
        self.write("sweep.csv", &table)?;
        self.write_json("result.json", &json!({ "mode": "example_n2", "params": params, "sweep": rows }))?;
        Ok(status)
    }
}
