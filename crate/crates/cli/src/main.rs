mod commands;
mod input;
mod json;
mod render;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lwot::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "lwot", version, about = "Layerwise-Wasserstein distances, barycenters and skeletal root measures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Args, Debug, Clone)]
pub struct Opts {
    /// Barycentric weights, comma separated (normalized if they do not sum to 1)
    #[arg(long, global = true, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Level slabs for skeletal barycenters and skeleton discretization
    #[arg(long, global = true, default_value_t = 64)]
    pub slabs: usize,
    /// Angles in the coarse rotation scan
    #[arg(long = "rot-grid", global = true, default_value_t = 64)]
    pub rot_grid: usize,
    /// Bracket width ending the golden-section refinement
    #[arg(long = "rot-tol", global = true, default_value_t = 1e-6)]
    pub rot_tol: f64,
    /// Random restarts of the symmetrized barycenter search
    #[arg(long, global = true, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of LP columns before failing with ProblemTooLarge
    #[arg(long = "lp-cap", global = true, default_value_t = lwot::discrete_ot::DEFAULT_COLUMN_CAP)]
    pub lp_cap: usize,
    /// Write the JSON document here instead of stdout
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Also write an SVG rendering
    #[arg(long, global = true)]
    pub svg: Option<String>,
    /// Vertical density bounds `L,U` for root-length brackets
    #[arg(long, global = true, value_delimiter = ',', num_args = 2)]
    pub bounds: Option<Vec<f64>>,
    #[arg(long, global = true, default_value_t = 800.0)]
    pub width: f64,
    #[arg(long, global = true, default_value_t = 800.0)]
    pub height: f64,
    #[arg(long, global = true, default_value_t = 40.0)]
    pub margin: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Squared layerwise-Wasserstein distance
    Dist { a: String, b: String },
    /// Distance minimized over horizontal rotations (d = 2)
    Symdist { a: String, b: String },
    /// Layerwise barycenter
    Bary {
        #[arg(required = true)]
        inputs: Vec<String>,
    },
    /// Rotation-symmetrized barycenter (d = 2)
    Symbary {
        #[arg(required = true)]
        inputs: Vec<String>,
    },
    /// Evaluate a phenotype (entropy, vmean, vvar, venergy:r, vq:l, lvar); with
    /// several inputs, also compare with its value at the barycenter
    Phenotype {
        name: String,
        #[arg(required = true)]
        inputs: Vec<String>,
    },
    /// Check S1-S3 and W3 and classify a skeletal root measure
    SkeletonValidate { input: String },
    /// Layerwise barycenter of skeletal root measures, rebuilt as limbs
    SkeletonBary {
        #[arg(required = true)]
        inputs: Vec<String>,
    },
    /// Ghost limbs of a skeletal family, with their active heights
    Ghost {
        #[arg(required = true)]
        inputs: Vec<String>,
    },
    /// Root lengths, and for families the barycenter length and its bracket
    Rootlength {
        #[arg(required = true)]
        inputs: Vec<String>,
    },
    /// Layerwise (Knothe-Rosenblatt) coupling of two d = 1 measures
    Coupling { a: String, b: String },
    /// Draw an input as SVG (needs --svg)
    Render { input: String },
}

fn error_document(code: &str, detail: &str) -> String {
    json::to_string(&json!({ "error": { "code": code, "detail": detail } }))
}

fn configure_threads() {
    let Ok(raw) = std::env::var("LWOT_THREADS") else { return };
    match raw.trim().parse::<usize>() {
        Ok(0) => {}
        Ok(n) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("LWOT_THREADS ignored: {e}");
            }
        }
        Err(_) => log::warn!("LWOT_THREADS={raw} is not a thread count; using all cores"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            print!("{}", error_document("UsageError", e.to_string().trim()));
            return ExitCode::from(1);
        }
    };
    configure_threads();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            print!("{}", error_document(e.code(), &e.to_string()));
            ExitCode::from(if matches!(e, Error::Io(_)) { 2 } else { 1 })
        }
    }
}
