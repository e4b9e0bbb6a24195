//! Run configuration: a flat `key = value` text format with dotted key
//! names, strict about what it accepts.  Unknown keys are errors so that a
//! typo cannot silently fall back to a default.

use anyhow::{anyhow, bail, Context, Result};
use kgm_core::field::BoundaryField;
use kgm_core::grid::{Grid, Side};
use kgm_core::reduced::{ReducedProblem, Tolerances};
use kgm_core::sample;
use kgm_core::ScalarField;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::formats;

/// Grid shape: dimension, nodes per axis, box extents.
#[derive(Clone, Debug)]
pub struct GridConfig {
    pub dim: usize,
    pub n: [usize; 3],
    pub extent: [f64; 3],
}

/// Coupling coefficient: a named generator or a nodal file.
#[derive(Clone, Debug)]
pub enum CouplingSpec {
    Constant { value: f64 },
    Gaussian { amp: f64, center: [f64; 3], radius: f64 },
    /// Two gaussian lumps sharing one radius.
    TwoGaussians {
        amp: f64,
        amp2: f64,
        center: [f64; 3],
        center2: [f64; 3],
        radius: f64,
    },
    /// Indicator of the upper half of the box along `axis`.
    Half { axis: usize, value: f64 },
    File { path: PathBuf },
}

/// Boundary flux data: a named generator or a boundary file.
#[derive(Clone, Debug)]
pub enum BoundarySpec {
    Constant { value: f64 },
    /// `value` on one face, zero elsewhere.
    Face { axis: usize, side: Side, value: f64 },
    /// `+value` on the upper face of `axis`, `-value` on the lower one:
    /// zero net flux by symmetry.
    Dipole { axis: usize, value: f64 },
    File { path: PathBuf },
}

/// Everything a run needs; every experiment reads the same structure.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub mass: f64,
    pub coupling: CouplingSpec,
    pub boundary: BoundarySpec,
    /// Multiplies the coupling coefficient after generation.
    pub scale_q: f64,
    /// Multiplies the boundary data after generation.
    pub scale_alpha: f64,
    pub tol: Tolerances,
    pub seed: u64,
    /// Worker cap for the parts that run probes or seeds concurrently.
    pub workers: usize,
    pub solve: SolveConfig,
    pub invariants: InvariantsConfig,
    pub sweep: SweepConfig,
    pub constants: ConstantsConfig,
    pub vanish: VanishConfig,
    /// Directory file paths in the config are resolved against.
    pub base: PathBuf,
}

#[derive(Clone, Debug)]
pub struct SolveConfig {
    pub max_iters: usize,
    /// Relative seed perturbation around the ground mode.
    pub noise: f64,
    /// Number of multistart points to look for (1 disables deflation).
    pub points: usize,
    pub sep_tol: f64,
    /// Independent seeds for the agreement check.
    pub seeds: usize,
}

#[derive(Clone, Debug)]
pub struct InvariantsConfig {
    pub probes: usize,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub count: usize,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Clone, Debug)]
pub struct ConstantsConfig {
    pub restarts: usize,
}

#[derive(Clone, Debug)]
pub struct VanishConfig {
    pub seeds: usize,
    /// Gradient-norm decay factor that counts as "driven to zero".
    pub decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig { dim: 3, n: [9, 9, 9], extent: [1.0, 1.0, 1.0] },
            mass: 1.0,
            coupling: CouplingSpec::Constant { value: 0.3 },
            boundary: BoundarySpec::Constant { value: 0.1 },
            scale_q: 1.0,
            scale_alpha: 1.0,
            tol: Tolerances { lin: 1e-12, grad: 1e-6, lambda: 1e-12 },
            seed: 0,
            workers: 4,
            solve: SolveConfig {
                max_iters: 5000,
                noise: 1e-2,
                points: 1,
                sep_tol: 1e-3,
                seeds: 5,
            },
            invariants: InvariantsConfig { probes: 50 },
            sweep: SweepConfig { count: 9, t_min: 0.05, t_max: 5.0 },
            constants: ConstantsConfig { restarts: 20 },
            vanish: VanishConfig { seeds: 5, decay: 1e-4 },
            base: PathBuf::from("."),
        }
    }
}

/// Grid-size profiles selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// 9 nodes per axis.
    Fast,
    /// 17 nodes per axis.
    Fidelity,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, base)
    }

    /// Parse the flat `key = value` format.  Blank lines and `#` comments
    /// are ignored; every key must be known and every value well-formed.
    pub fn parse(text: &str, base: PathBuf) -> Result<RunConfig> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("line {}: duplicate key `{key}`", lineno + 1);
            }
        }
        Self::from_map(map, base)
    }

    fn from_map(mut map: BTreeMap<String, String>, base: PathBuf) -> Result<RunConfig> {
        let mut cfg = RunConfig { base, ..RunConfig::default() };

        if let Some(v) = map.remove("grid.dim") {
            cfg.grid.dim = parse_one(&v, "grid.dim")?;
        }
        if let Some(v) = map.remove("grid.n") {
            cfg.grid.n = parse_axes(&v, "grid.n", cfg.grid.dim, 1usize)?;
        }
        if let Some(v) = map.remove("grid.extent") {
            cfg.grid.extent = parse_axes(&v, "grid.extent", cfg.grid.dim, 1.0f64)?;
        }
        if let Some(v) = map.remove("model.m") {
            cfg.mass = parse_one(&v, "model.m")?;
        }

        if let Some(kind) = map.remove("q.kind") {
            cfg.coupling = match kind.as_str() {
                "constant" => CouplingSpec::Constant {
                    value: take(&mut map, "q.value")?,
                },
                "gaussian" => CouplingSpec::Gaussian {
                    amp: take(&mut map, "q.amp")?,
                    center: take_axes(&mut map, "q.center", cfg.grid.dim)?,
                    radius: take(&mut map, "q.radius")?,
                },
                "two-gaussians" => CouplingSpec::TwoGaussians {
                    amp: take(&mut map, "q.amp")?,
                    amp2: take(&mut map, "q.amp2")?,
                    center: take_axes(&mut map, "q.center", cfg.grid.dim)?,
                    center2: take_axes(&mut map, "q.center2", cfg.grid.dim)?,
                    radius: take(&mut map, "q.radius")?,
                },
                "half" => CouplingSpec::Half {
                    axis: take(&mut map, "q.axis")?,
                    value: take(&mut map, "q.value")?,
                },
                "file" => CouplingSpec::File {
                    path: PathBuf::from(
                        map.remove("q.path").ok_or_else(|| anyhow!("q.kind = file needs q.path"))?,
                    ),
                },
                other => bail!("q.kind `{other}` is not one of constant|gaussian|two-gaussians|half|file"),
            };
        }

        if let Some(kind) = map.remove("alpha.kind") {
            cfg.boundary = match kind.as_str() {
                "constant" => BoundarySpec::Constant {
                    value: take(&mut map, "alpha.value")?,
                },
                "face" => BoundarySpec::Face {
                    axis: take(&mut map, "alpha.axis")?,
                    side: match map
                        .remove("alpha.side")
                        .ok_or_else(|| anyhow!("alpha.kind = face needs alpha.side"))?
                        .as_str()
                    {
                        "lower" => Side::Lower,
                        "upper" => Side::Upper,
                        other => bail!("alpha.side `{other}` is not lower|upper"),
                    },
                    value: take(&mut map, "alpha.value")?,
                },
                "dipole" => BoundarySpec::Dipole {
                    axis: take(&mut map, "alpha.axis")?,
                    value: take(&mut map, "alpha.value")?,
                },
                "file" => BoundarySpec::File {
                    path: PathBuf::from(
                        map.remove("alpha.path")
                            .ok_or_else(|| anyhow!("alpha.kind = file needs alpha.path"))?,
                    ),
                },
                other => bail!("alpha.kind `{other}` is not one of constant|face|dipole|file"),
            };
        }

        if let Some(v) = map.remove("scale.q") {
            cfg.scale_q = parse_one(&v, "scale.q")?;
        }
        if let Some(v) = map.remove("scale.alpha") {
            cfg.scale_alpha = parse_one(&v, "scale.alpha")?;
        }
        if let Some(v) = map.remove("tol.lin") {
            cfg.tol.lin = parse_one(&v, "tol.lin")?;
        }
        if let Some(v) = map.remove("tol.grad") {
            cfg.tol.grad = parse_one(&v, "tol.grad")?;
        }
        if let Some(v) = map.remove("tol.lambda") {
            cfg.tol.lambda = parse_one(&v, "tol.lambda")?;
        }
        if let Some(v) = map.remove("seed") {
            cfg.seed = parse_one(&v, "seed")?;
        }
        if let Some(v) = map.remove("workers") {
            cfg.workers = parse_one(&v, "workers")?;
        }
        if let Some(v) = map.remove("solve.max_iters") {
            cfg.solve.max_iters = parse_one(&v, "solve.max_iters")?;
        }
        if let Some(v) = map.remove("solve.noise") {
            cfg.solve.noise = parse_one(&v, "solve.noise")?;
        }
        if let Some(v) = map.remove("solve.points") {
            cfg.solve.points = parse_one(&v, "solve.points")?;
        }
        if let Some(v) = map.remove("solve.sep_tol") {
            cfg.solve.sep_tol = parse_one(&v, "solve.sep_tol")?;
        }
        if let Some(v) = map.remove("solve.seeds") {
            cfg.solve.seeds = parse_one(&v, "solve.seeds")?;
        }
        if let Some(v) = map.remove("invariants.probes") {
            cfg.invariants.probes = parse_one(&v, "invariants.probes")?;
        }
        if let Some(v) = map.remove("sweep.count") {
            cfg.sweep.count = parse_one(&v, "sweep.count")?;
        }
        if let Some(v) = map.remove("sweep.t_min") {
            cfg.sweep.t_min = parse_one(&v, "sweep.t_min")?;
        }
        if let Some(v) = map.remove("sweep.t_max") {
            cfg.sweep.t_max = parse_one(&v, "sweep.t_max")?;
        }
        if let Some(v) = map.remove("constants.restarts") {
            cfg.constants.restarts = parse_one(&v, "constants.restarts")?;
        }
        if let Some(v) = map.remove("vanish.seeds") {
            cfg.vanish.seeds = parse_one(&v, "vanish.seeds")?;
        }
        if let Some(v) = map.remove("vanish.decay") {
            cfg.vanish.decay = parse_one(&v, "vanish.decay")?;
        }

        if !map.is_empty() {
            let keys: Vec<&str> = map.keys().map(String::as_str).collect();
            bail!("unknown config keys: {}", keys.join(", "));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol.lin > 0.0 && self.tol.grad > 0.0 && self.tol.lambda > 0.0) {
            bail!("all tolerances must be positive");
        }
        if self.sweep.t_min <= 0.0 {
            bail!("sweep.t_min must be positive: a zero coupling scale makes every field inadmissible");
        }
        if self.sweep.t_max < self.sweep.t_min {
            bail!("sweep.t_max must be >= sweep.t_min");
        }
        if self.workers == 0 {
            bail!("workers must be >= 1");
        }
        Ok(())
    }

    /// Pin the grid size the profile mandates.
    pub fn apply_profile(&mut self, profile: Profile) {
        let n = match profile {
            Profile::Fast => 9,
            Profile::Fidelity => 17,
        };
        self.grid.n = [n, n, n];
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>> {
        let g = Grid::new(
            self.grid.dim,
            &self.grid.n[..self.grid.dim],
            &self.grid.extent[..self.grid.dim],
        )
        .context("building the grid")?;
        Ok(Arc::new(g))
    }

    pub fn build_coupling(&self, grid: &Arc<Grid>) -> Result<ScalarField> {
        let q = match &self.coupling {
            CouplingSpec::Constant { value } => {
                ScalarField::from_fn(grid, kgm_core::Space::Neumann, |_| *value)
            }
            CouplingSpec::Gaussian { amp, center, radius } => {
                sample::gaussian(grid, *center, *radius, *amp)
            }
            CouplingSpec::TwoGaussians { amp, amp2, center, center2, radius } => {
                let a = sample::gaussian(grid, *center, *radius, *amp);
                let b = sample::gaussian(grid, *center2, *radius, *amp2);
                a.axpy(1.0, &b).map_err(anyhow::Error::from)?
            }
            CouplingSpec::Half { axis, value } => sample::half_indicator(grid, *axis, *value),
            CouplingSpec::File { path } => {
                let f = formats::read_scalar(&self.base.join(path))?;
                if f.grid().as_ref() != grid.as_ref() {
                    bail!("coupling file {} was written for a different grid", path.display());
                }
                f
            }
        };
        Ok(q.scale(self.scale_q))
    }

    pub fn build_boundary(&self, grid: &Arc<Grid>) -> Result<BoundaryField> {
        let alpha = match &self.boundary {
            BoundarySpec::Constant { value } => BoundaryField::constant(grid, *value),
            BoundarySpec::Face { axis, side, value } => {
                let (axis, side, value) = (*axis, *side, *value);
                BoundaryField::from_face_fns(grid, move |a, s, _| {
                    if a == axis && s == side {
                        value
                    } else {
                        0.0
                    }
                })
            }
            BoundarySpec::Dipole { axis, value } => {
                let (axis, value) = (*axis, *value);
                BoundaryField::from_face_fns(grid, move |a, s, _| {
                    if a != axis {
                        0.0
                    } else if s == Side::Upper {
                        value
                    } else {
                        -value
                    }
                })
            }
            BoundarySpec::File { path } => {
                let (file_grid, values) = formats::read_boundary(&self.base.join(path))?;
                if file_grid.as_ref() != grid.as_ref() {
                    bail!("boundary file {} was written for a different grid", path.display());
                }
                BoundaryField::from_values(grid, values).map_err(anyhow::Error::from)?
            }
        };
        Ok(alpha.scale(self.scale_alpha))
    }

    /// Assemble the reduced problem this configuration describes.
    pub fn build_problem(&self) -> Result<ReducedProblem> {
        let grid = self.build_grid()?;
        let q = self.build_coupling(&grid)?;
        let alpha = self.build_boundary(&grid)?;
        ReducedProblem::new(self.mass, q, alpha, self.tol)
            .context("assembling the reduced problem")
    }

    /// The effective configuration as config-format lines, echoed at the
    /// top of every report so a run is reproducible from its output alone.
    pub fn echo(&self) -> Vec<String> {
        let dim = self.grid.dim;
        let mut out = vec![
            format!("grid.dim = {}", dim),
            format!("grid.n = {}", join(&self.grid.n[..dim])),
            format!("grid.extent = {}", join(&self.grid.extent[..dim])),
            format!("model.m = {}", self.mass),
        ];
        match &self.coupling {
            CouplingSpec::Constant { value } => {
                out.push("q.kind = constant".into());
                out.push(format!("q.value = {value}"));
            }
            CouplingSpec::Gaussian { amp, center, radius } => {
                out.push("q.kind = gaussian".into());
                out.push(format!("q.amp = {amp}"));
                out.push(format!("q.center = {}", join(&center[..dim])));
                out.push(format!("q.radius = {radius}"));
            }
            CouplingSpec::TwoGaussians { amp, amp2, center, center2, radius } => {
                out.push("q.kind = two-gaussians".into());
                out.push(format!("q.amp = {amp}"));
                out.push(format!("q.amp2 = {amp2}"));
                out.push(format!("q.center = {}", join(&center[..dim])));
                out.push(format!("q.center2 = {}", join(&center2[..dim])));
                out.push(format!("q.radius = {radius}"));
            }
            CouplingSpec::Half { axis, value } => {
                out.push("q.kind = half".into());
                out.push(format!("q.axis = {axis}"));
                out.push(format!("q.value = {value}"));
            }
            CouplingSpec::File { path } => {
                out.push("q.kind = file".into());
                out.push(format!("q.path = {}", path.display()));
            }
        }
        match &self.boundary {
            BoundarySpec::Constant { value } => {
                out.push("alpha.kind = constant".into());
                out.push(format!("alpha.value = {value}"));
            }
            BoundarySpec::Face { axis, side, value } => {
                out.push("alpha.kind = face".into());
                out.push(format!("alpha.axis = {axis}"));
                out.push(format!(
                    "alpha.side = {}",
                    if *side == Side::Lower { "lower" } else { "upper" }
                ));
                out.push(format!("alpha.value = {value}"));
            }
            BoundarySpec::Dipole { axis, value } => {
                out.push("alpha.kind = dipole".into());
                out.push(format!("alpha.axis = {axis}"));
                out.push(format!("alpha.value = {value}"));
            }
            BoundarySpec::File { path } => {
                out.push("alpha.kind = file".into());
                out.push(format!("alpha.path = {}", path.display()));
            }
        }
        out.extend([
            format!("scale.q = {}", self.scale_q),
            format!("scale.alpha = {}", self.scale_alpha),
            format!("tol.lin = {}", self.tol.lin),
            format!("tol.grad = {}", self.tol.grad),
            format!("tol.lambda = {}", self.tol.lambda),
            format!("seed = {}", self.seed),
            format!("workers = {}", self.workers),
        ]);
        out
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_one<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("config key {key}: cannot parse `{v}`"))
}

fn take<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = map.remove(key).ok_or_else(|| anyhow!("missing config key {key}"))?;
    parse_one(&v, key)
}

/// Parse 1 or `dim` whitespace-separated values; a single value is
/// broadcast to every axis.
fn parse_axes<T: std::str::FromStr + Copy + Default>(
    v: &str,
    key: &str,
    dim: usize,
    fill: T,
) -> Result<[T; 3]> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    let mut out = [fill; 3];
    match parts.len() {
        1 => {
            let x = parse_one(parts[0], key)?;
            for slot in out.iter_mut().take(dim) {
                *slot = x;
            }
        }
        n if n == dim => {
            for (slot, p) in out.iter_mut().zip(&parts) {
                *slot = parse_one(p, key)?;
            }
        }
        n => bail!("config key {key}: expected 1 or {dim} values, got {n}"),
    }
    Ok(out)
}

fn take_axes(map: &mut BTreeMap<String, String>, key: &str, dim: usize) -> Result<[f64; 3]> {
    let v = map.remove(key).ok_or_else(|| anyhow!("missing config key {key}"))?;
    parse_axes(&v, key, dim, 0.5)
}
