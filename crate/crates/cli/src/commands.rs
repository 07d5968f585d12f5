use lwot::discrete_ot::LpConfig;
use lwot::layerwise::{
    layerwise_coupling, lw_barycenter_objective_with, lw_barycenter_with, lw_distance_extended, lw_distance_with,
    symmetrized_barycenter_with, symmetrized_distance_with, RotationOptions, SymBaryOptions,
};
use lwot::measures::AtomicMeasure;
use lwot::phenotypes::{convexity_check, convexity_check_gridded, shannon_entropy, Phenotype};
use lwot::skeleton::{
    ghost, mark_active, root_length, root_length_bounds, skeletal_barycenter_with, validate, SkeletalRootMeasure,
    Strength, DEFAULT_GHOST_CAP,
};
use lwot::{Error, Result, Weights};
use serde::Serialize;
use serde_json::{json, Value};

use crate::input::{load, load_all, Input};
use crate::json as output;
use crate::render::{tuple_color, Canvas, Dot, Polyline, Scene};
use crate::{Cli, Command, Opts};

const WEIGHT_TOL: f64 = 1e-9;

struct Run<'a> {
    opts: &'a Opts,
    params: serde_json::Map<String, Value>,
    diagnostics: Vec<String>,
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

impl Run<'_> {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.diagnostics.push(msg);
    }

    fn param(&mut self, key: &str, v: Value) {
        self.params.insert(key.to_string(), v);
    }

    fn lp(&mut self) -> LpConfig {
        self.param("lp_cap", json!(self.opts.lp_cap));
        LpConfig { column_cap: self.opts.lp_cap }
    }

    fn slabs(&mut self) -> Result<usize> {
        if self.opts.slabs == 0 {
            return Err(Error::InvalidMeasure("--slabs must be at least 1".into()));
        }
        self.param("slabs", json!(self.opts.slabs));
        Ok(self.opts.slabs)
    }

    fn rotation(&mut self) -> RotationOptions {
        self.param("rot_grid", json!(self.opts.rot_grid));
        self.param("rot_tol", json!(self.opts.rot_tol));
        RotationOptions { grid: self.opts.rot_grid, tol: self.opts.rot_tol }
    }

    /// Uniform by default; positive weights off the simplex are rescaled.
    fn weights(&mut self, m: usize) -> Result<Weights> {
        let w = match &self.opts.weights {
            None => Weights::uniform(m)?,
            Some(values) => {
                if values.len() != m {
                    return Err(Error::InvalidWeights(format!("{} weights for {m} inputs", values.len())));
                }
                let total: f64 = values.iter().sum();
                if values.iter().all(|v| *v > 0.0) && (total - 1.0).abs() > WEIGHT_TOL {
                    self.warn(format!("weights summed to {total}; normalized"));
                    Weights::normalized(values.clone())?
                } else {
                    Weights::new(values.clone())?
                }
            }
        };
        self.param("weights", json!(w.as_slice()));
        Ok(w)
    }

    fn atomic(&mut self, inputs: &[Input]) -> Result<Vec<AtomicMeasure>> {
        if inputs.iter().any(|i| matches!(i, Input::Skeleton(_))) {
            self.slabs()?;
        }
        inputs.iter().map(|i| i.to_atomic(self.opts.slabs)).collect()
    }

    fn skeletons(&mut self, paths: &[String]) -> Result<Vec<SkeletalRootMeasure>> {
        let skms = paths.iter().map(|p| load(p)?.into_skeleton(p)).collect::<Result<Vec<_>>>()?;
        for (p, s) in paths.iter().zip(&skms) {
            let report = validate(s);
            if report.strength != Strength::Strong {
                self.diagnostics.push(format!(
                    "{p}: {} skeletal root measure ({} violations)",
                    to_value(&report.strength).as_str().unwrap_or("?"),
                    report.violations.len()
                ));
            }
        }
        Ok(skms)
    }

    fn render(&mut self, scene: &Scene) -> Result<()> {
        if let Some(path) = &self.opts.svg {
            let canvas = Canvas { width: self.opts.width, height: self.opts.height, margin: self.opts.margin };
            std::fs::write(path, scene.to_svg(canvas))?;
            self.param("svg", json!(path));
        }
        Ok(())
    }
}

fn atom_json(mu: &AtomicMeasure) -> Value {
    json!({
        "dim": mu.dim(),
        "atoms": mu.atoms().iter().map(|a| json!({ "x": a.x, "y": a.y, "w": a.w })).collect::<Vec<_>>(),
    })
}

fn atom_dots(scene: &mut Scene, mu: &AtomicMeasure, color: &str) {
    for a in mu.atoms() {
        scene.dots.push(Dot { x: a.x[0], y: a.y, mass: a.w, color: color.to_string() });
    }
}

fn limb_lines(scene: &mut Scene, skm: &SkeletalRootMeasure, color: impl Fn(usize) -> String, width: f64) {
    for (i, limb) in skm.limbs().iter().enumerate() {
        let points = limb.points().iter().map(|(y, x)| (x[0], *y)).collect();
        scene.polylines.push(Polyline { points, color: color(i), width });
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut run = Run { opts: &cli.opts, params: serde_json::Map::new(), diagnostics: Vec::new() };
    let mut scene = Scene::default();
    let (name, paths, result): (&str, Vec<String>, Value) = match &cli.command {
        Command::Dist { a, b } => {
            let paths = vec![a.clone(), b.clone()];
            let ms = run.atomic(&load_all(&paths)?)?;
            let lp = run.lp();
            let report = lw_distance_with(&ms[0], &ms[1], &lp)?;
            let mut v = to_value(&report);
            v["distance"] = json!(report.total_sq.sqrt());
            v["extended_sq"] = json!(lw_distance_extended(&ms[0], &ms[1])?);
            ("dist", paths, v)
        }
        Command::Symdist { a, b } => {
            let paths = vec![a.clone(), b.clone()];
            let ms = run.atomic(&load_all(&paths)?)?;
            let lp = run.lp();
            let rot = run.rotation();
            let r = symmetrized_distance_with(&ms[0], &ms[1], &rot, &lp)?;
            let plain = lw_distance_with(&ms[0], &ms[1], &lp)?.total_sq;
            let mut v = to_value(&r);
            v["plain_sq"] = json!(plain);
            ("symdist", paths, v)
        }
        Command::Bary { inputs } => {
            let ms = run.atomic(&load_all(inputs)?)?;
            let w = run.weights(ms.len())?;
            let lp = run.lp();
            let bar = lw_barycenter_with(&ms, &w, &lp)?;
            let objective = lw_barycenter_objective_with(&bar, &ms, &w, &lp)?;
            for m in &ms {
                atom_dots(&mut scene, m, "#bbbbbb");
            }
            atom_dots(&mut scene, &bar, "#c0392b");
            ("bary", inputs.clone(), json!({ "measure": atom_json(&bar), "objective": objective }))
        }
        Command::Symbary { inputs } => {
            let ms = run.atomic(&load_all(inputs)?)?;
            let w = run.weights(ms.len())?;
            let lp = run.lp();
            let rotation = run.rotation();
            let opts = SymBaryOptions { rotation, starts: run.opts.starts, seed: run.opts.seed, ..Default::default() };
            run.param("starts", json!(opts.starts));
            run.param("seed", json!(opts.seed));
            let r = symmetrized_barycenter_with(&ms, &w, &opts, &lp)?;
            atom_dots(&mut scene, &r.measure, "#c0392b");
            let v = json!({
                "measure": atom_json(&r.measure),
                "angles": r.angles,
                "objective": r.objective,
                "iterations": r.iterations,
            });
            ("symbary", inputs.clone(), v)
        }
        Command::Phenotype { name, inputs } => {
            let p: Phenotype = name.parse()?;
            run.param("phenotype", json!(p.to_string()));
            let loaded = load_all(inputs)?;
            let mut v = json!({});
            if loaded.iter().all(|i| matches!(i, Input::Grid(_))) {
                let grids = loaded.into_iter().zip(inputs).map(|(i, p)| i.into_grid(p)).collect::<Result<Vec<_>>>()?;
                v["values"] = json!(grids.iter().map(|g| p.eval_gridded(g)).collect::<Result<Vec<_>>>()?);
                if p == Phenotype::Entropy {
                    v["entropy"] = to_value(&grids.iter().map(shannon_entropy).collect::<Result<Vec<_>>>()?);
                }
                if grids.len() > 1 {
                    let w = run.weights(grids.len())?;
                    v["convexity"] = to_value(&convexity_check_gridded(p, &grids, &w)?);
                }
            } else {
                let ms = run.atomic(&loaded)?;
                v["values"] = json!(ms.iter().map(|m| p.eval_atomic(m)).collect::<Result<Vec<_>>>()?);
                if ms.len() > 1 {
                    let w = run.weights(ms.len())?;
                    v["convexity"] = to_value(&convexity_check(p, &ms, &w)?);
                }
            }
            ("phenotype", inputs.clone(), v)
        }
        Command::SkeletonValidate { input } => {
            let skm = load(input)?.into_skeleton(input)?;
            let report = validate(&skm);
            let mut v = to_value(&report);
            v["root_length"] = json!(root_length(&skm));
            v["limbs"] = json!(skm.limbs().len());
            v["total_mass"] = json!(skm.total_mass());
            limb_lines(&mut scene, &skm, |_| "#333333".into(), 1.5);
            ("skeleton-validate", vec![input.clone()], v)
        }
        Command::SkeletonBary { inputs } => {
            let skms = run.skeletons(inputs)?;
            let w = run.weights(skms.len())?;
            let slabs = run.slabs()?;
            let lp = run.lp();
            let bar = skeletal_barycenter_with(&skms, &w, slabs, &lp)?;
            for s in &skms {
                limb_lines(&mut scene, s, |_| "#cccccc".into(), 1.0);
            }
            limb_lines(&mut scene, &bar.measure, |i| tuple_color(&bar.tuples[i]), 2.0);
            if bar.report.strength != Strength::Strong {
                run.diagnostics.push(format!(
                    "barycenter is {} ({} violations)",
                    to_value(&bar.report.strength).as_str().unwrap_or("?"),
                    bar.report.violations.len()
                ));
            }
            let v = json!({
                "measure": bar.measure.to_json_value(),
                "tuples": bar.tuples,
                "slabs": to_value(&bar.slabs),
                "report": to_value(&bar.report),
                "inputs": to_value(&bar.inputs),
                "root_length": root_length(&bar.measure),
            });
            ("skeleton-bary", inputs.clone(), v)
        }
        Command::Ghost { inputs } => {
            let skms = run.skeletons(inputs)?;
            let w = run.weights(skms.len())?;
            let slabs = run.slabs()?;
            let lp = run.lp();
            let mut limbs = ghost(&skms, &w, DEFAULT_GHOST_CAP)?;
            let bar = skeletal_barycenter_with(&skms, &w, slabs, &lp)?;
            mark_active(&mut limbs, &bar);
            for g in &limbs {
                let points = g.polyline.iter().map(|(y, x)| (x[0], *y)).collect();
                scene.polylines.push(Polyline { points, color: "#cccccc".into(), width: 1.0 });
            }
            limb_lines(&mut scene, &bar.measure, |i| tuple_color(&bar.tuples[i]), 2.0);
            let active = limbs.iter().filter(|g| !g.active.is_empty()).count();
            ("ghost", inputs.clone(), json!({ "count": limbs.len(), "active": active, "limbs": to_value(&limbs) }))
        }
        Command::Rootlength { inputs } => {
            let skms = run.skeletons(inputs)?;
            let lengths: Vec<f64> = skms.iter().map(root_length).collect();
            let mut v = json!({ "lengths": lengths });
            if skms.len() > 1 {
                let w = run.weights(skms.len())?;
                let slabs = run.slabs()?;
                let lp = run.lp();
                let bounds = match &run.opts.bounds {
                    Some(b) => {
                        run.param("bounds", json!(b));
                        Some((b[0], b[1]))
                    }
                    None => None,
                };
                let bar = skeletal_barycenter_with(&skms, &w, slabs, &lp)?;
                let r = root_length(&bar.measure);
                v["barycenter"] = json!(r);
                match root_length_bounds(&skms, &w, bounds) {
                    Ok(b) => {
                        v["inside"] = json!(b.lower <= r && r <= b.upper);
                        v["bracket"] = to_value(&b);
                    }
                    Err(Error::BoundsUnavailable) => {
                        run.diagnostics.push("bracket skipped: no --bounds and inputs declare none".into())
                    }
                    Err(e) => return Err(e),
                }
            }
            ("rootlength", inputs.clone(), v)
        }
        Command::Coupling { a, b } => {
            let paths = vec![a.clone(), b.clone()];
            let ms = run.atomic(&load_all(&paths)?)?;
            ("coupling", paths, to_value(&layerwise_coupling(&ms[0], &ms[1])?))
        }
        Command::Render { input } => {
            if run.opts.svg.is_none() {
                return Err(Error::Parse("render needs --svg <path>".into()));
            }
            let v = match load(input)? {
                Input::Skeleton(s) => {
                    limb_lines(&mut scene, &s, |_| "#333333".into(), 1.5);
                    json!({ "kind": "skeleton", "limbs": s.limbs().len() })
                }
                other => {
                    let kind = other.kind();
                    let mu = run.atomic(std::slice::from_ref(&other))?.remove(0);
                    atom_dots(&mut scene, &mu, "#2c3e50");
                    json!({ "kind": kind, "atoms": mu.len() })
                }
            };
            ("render", vec![input.clone()], v)
        }
    };
    run.render(&scene)?;
    let doc = json!({
        "command": name,
        "inputs": paths,
        "params": Value::Object(run.params),
        "result": result,
        "diagnostics": run.diagnostics,
    });
    let text = output::to_string(&doc);
    match &cli.opts.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
