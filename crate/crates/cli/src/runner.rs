use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use roughfk_core::feynman_kac::{self, McConfig, MarkovConfig};
use roughfk_core::mcstats::{tags, SeedLedger};
use roughfk_core::pde_residual::{self, ConditionIiReport, ResidualReport};
use roughfk_core::presets::{self, Preset};
use roughfk_core::rsde::NoiseSpec;
use roughfk_core::RoughPath;

use crate::config::{Format, Output, ResolvedConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Written last as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// The resolved configuration without `out_dir`, so runs written to
    /// different directories stay identical.
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn put(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: contents.len(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// The resolved configuration as echoed into output files.
pub fn config_echo(cfg: &ResolvedConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("out_dir");
    }
    v
}

struct Context<'a> {
    cfg: &'a ResolvedConfig,
    ledger: SeedLedger,
    driver: Arc<RoughPath>,
    preset: Preset,
    mc: McConfig,
}

impl Context<'_> {
    fn preset_on(&self, driver: &Arc<RoughPath>) -> roughfk_core::Result<Preset> {
        presets::build(&self.cfg.scenario, &self.cfg.params, driver, self.cfg.exponents)
    }

    /// Driver realization `j`; realization 0 is the main driver.
    fn driver_at(&self, j: usize) -> roughfk_core::Result<Arc<RoughPath>> {
        if j == 0 {
            Ok(self.driver.clone())
        } else {
            Ok(Arc::new(self.cfg.driver.build_with(&self.ledger, j as u64)?))
        }
    }
}

/// Run `cfg`, writing every requested output and the manifest into `out`.
pub fn run(cfg: &ResolvedConfig, out: &Path) -> CliResult<Manifest> {
    fs::create_dir_all(out)?;
    let stage = |name: &'static str| move |e| CliError::in_stage(name, e);
    let ledger = SeedLedger::new(cfg.seed);
    let driver = Arc::new(cfg.driver.build(&ledger).map_err(stage("driver"))?);
    let preset = presets::build(&cfg.scenario, &cfg.params, &driver, cfg.exponents).map_err(CliError::at_load)?;
    let mc = McConfig::new(cfg.paths, NoiseSpec::new(ledger, tags::OUTER));
    let ctx = Context { cfg, ledger, driver, preset, mc };
    let mut w = Writer { dir: out.to_path_buf(), files: Vec::new() };
    let ext = cfg.format.extension();
    let echo = config_echo(cfg);

    let driver_out = match cfg.format {
        Format::Csv => ctx.driver.path_csv(),
        Format::Json => ctx.driver.to_json() + "\n",
    };
    w.put(&format!("driver.{ext}"), &driver_out)?;

    if [Output::U, Output::Grad, Output::Hess].iter().any(|&o| cfg.wants(o)) {
        let surface = feynman_kac::build_surface(
            &ctx.preset.coefficients,
            &ctx.driver,
            &cfg.mesh.s_nodes,
            &cfg.mesh.mesh()?,
            cfg.order(),
            &ctx.mc,
        )
        .map_err(stage("surface"))?;
        let body = match cfg.format {
            Format::Csv => surface.to_csv(),
            Format::Json => surface.to_json(&echo) + "\n",
        };
        w.put(&format!("surface.{ext}"), &body)?;
    }

    if cfg.wants(Output::Residuals) {
        let (res, cond) = residuals(&ctx).map_err(stage("residuals"))?;
        match cfg.format {
            Format::Csv => {
                w.put("residuals.csv", &res.to_csv())?;
                let mut s = String::from("family,h,sup_residual,noise_floor,slope,target\n");
                let rows = [
                    ("first", &cond.first, cond.alpha_prime),
                    ("second", &cond.second, cond.alpha_prime + cond.alpha_second),
                ];
                for (family, r, target) in rows {
                    let slope = r.slope.map_or(f64::NAN, |f| f.slope);
                    for row in &r.rows {
                        let _ = writeln!(
                            s,
                            "{family},{},{},{},{slope},{target}",
                            row.h, row.sup_residual, row.noise_floor
                        );
                    }
                }
                w.put("condition_ii.csv", &s)?;
            }
            Format::Json => {
                w.put("residuals.json", &json(&serde_json::json!({ "residual": res, "condition_ii": cond })))?;
            }
        }
    }

    if cfg.wants(Output::Markov) {
        let m = &cfg.markov;
        let mcfg = MarkovConfig { outer: ctx.mc, slice_paths: m.slice_paths, mesh_points: m.mesh_points, half_width: None };
        let r = feynman_kac::markov_consistency(&ctx.preset.coefficients, &ctx.driver, m.s_node, m.t_node, m.x, &mcfg)
            .map_err(stage("markov"))?;
        let body = match cfg.format {
            Format::Csv => format!(
                "s,t,x,direct,direct_se,nested,nested_se,slice_se,combined_se,discrepancy,exit_fraction\n{},{},{},{},{},{},{},{},{},{},{}\n",
                r.s, r.t, r.x, r.direct, r.direct_se, r.nested, r.nested_se, r.slice_se, r.combined_se, r.discrepancy, r.exit_fraction
            ),
            Format::Json => json(&r),
        };
        w.put(&format!("markov.{ext}"), &body)?;
    }

    if cfg.wants(Output::Robustness) {
        let d = &cfg.driver;
        let v = cfg.robustness.perturbation.lift(d.dim, d.horizon, d.steps, d.refine).map_err(stage("robustness"))?;
        let mesh = cfg.mesh.mesh()?;
        let mut rows = Vec::new();
        for &eps in &cfg.robustness.eps {
            let b = ctx.driver.translate(&v, eps).map_err(stage("robustness"))?;
            let r = feynman_kac::robustness_in_driver(
                &ctx.preset.coefficients,
                &ctx.driver,
                &b,
                &cfg.mesh.s_nodes,
                &mesh,
                cfg.order(),
                &ctx.mc,
            )
            .map_err(stage("robustness"))?;
            rows.push((eps, r));
        }
        let body = match cfg.format {
            Format::Csv => {
                let mut s = String::from("eps,rho,dist_u,dist_grad,dist_hess,ratio_u,ratio_total\n");
                for (eps, r) in &rows {
                    let _ = writeln!(
                        s,
                        "{eps},{},{},{},{},{},{}",
                        r.rho.total, r.dist_u, r.dist_grad, r.dist_hess, r.ratio_u, r.ratio_total
                    );
                }
                s
            }
            Format::Json => json(&rows.iter().map(|(eps, r)| serde_json::json!({ "eps": eps, "report": r })).collect::<Vec<_>>()),
        };
        w.put(&format!("robustness.{ext}"), &body)?;
    }

    if cfg.wants(Output::Moments) {
        let x0 = ctx.preset.x0();
        let sups = if cfg.moments.resample_driver && cfg.driver.kind.is_random() {
            feynman_kac::weight_suprema_over_drivers(
                cfg.paths,
                |j| ctx.driver_at(j as usize),
                |w| ctx.preset_on(w).map(|p| p.coefficients),
                &x0,
                &McConfig { paths: 1, ..ctx.mc },
            )
        } else {
            feynman_kac::weight_suprema(&ctx.preset.coefficients, &ctx.driver, 0, &x0, &ctx.mc)
        }
        .map_err(stage("moments"))?;
        let rows = feynman_kac::exponential_moment_probe_from_sups(&sups, &cfg.moments.p).map_err(stage("moments"))?;
        let body = match cfg.format {
            Format::Csv => {
                let mut s = String::from("p,full,subsample,ratio\n");
                for r in &rows {
                    let _ = writeln!(s, "{},{},{},{}", r.p, r.full, r.subsample, r.ratio);
                }
                s
            }
            Format::Json => json(&rows),
        };
        w.put(&format!("moments.{ext}"), &body)?;
    }

    let manifest = Manifest { tool: "roughfk", version: env!("CARGO_PKG_VERSION"), config: echo, files: w.files };
    fs::write(out.join("manifest.json"), json(&manifest))?;
    Ok(manifest)
}

/// Residual tables on the contiguous `s_nodes`, averaged over
/// `residuals.drivers` independent drivers when the driver is random.
fn residuals(ctx: &Context<'_>) -> roughfk_core::Result<(ResidualReport, ConditionIiReport)> {
    let cfg = ctx.cfg;
    let nodes = &cfg.mesh.s_nodes;
    let pairs = pde_residual::dyadic_pairs(nodes[0], nodes[nodes.len() - 1]);
    let mesh = cfg.mesh.mesh().map_err(|e| roughfk_core::Error::InvalidParameter(e.to_string()))?;
    let drivers = if cfg.driver.kind.is_random() { cfg.residuals.drivers } else { 1 };
    let (mut res, mut cond) = (Vec::new(), Vec::new());
    for j in 0..drivers {
        let w = ctx.driver_at(j)?;
        let cs = if j == 0 { ctx.preset.coefficients.clone() } else { ctx.preset_on(&w)?.coefficients };
        let surface = feynman_kac::build_surface(&cs, &w, nodes, &mesh, 0, &ctx.mc)?;
        res.push(pde_residual::davie_residual_of_u(&surface, &cs, &w, &pairs)?);
        cond.push(pde_residual::condition_ii_check(&surface, &cs, &w, cfg.residuals.mu, &pairs)?);
    }
    let cond = ConditionIiReport::pooled(&cond).expect("at least one driver");
    Ok((ResidualReport::pooled(&res), cond))
}

/// [`run`] on a pool of `threads` workers, or rayon's default pool.
pub fn run_with_threads(cfg: &ResolvedConfig, out: &Path, threads: Option<usize>) -> CliResult<Manifest> {
    match threads {
        None => run(cfg, out),
        Some(0) => Err(CliError::Invalid("--threads must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?
            .install(|| run(cfg, out)),
    }
}
