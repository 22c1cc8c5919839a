use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use weighted_sobolev::config::{parse_measure_spec, parse_scales};
use weighted_sobolev::discretization::{assemble_stiffness, project_function, GridSpace, Point};
use weighted_sobolev::expr::Expr;
use weighted_sobolev::fibers::{
    am_distribution, tangent_sweep, write_fibers_csv, DistributionField, FiberParams, SweepSchedule, DEFAULT_SVD_TOL,
};
use weighted_sobolev::harness::{self, SuiteConfig, TensorContext, Thresholds, VerificationReport};
use weighted_sobolev::measure::MeasureSpec;
use weighted_sobolev::sobolev::{
    check_divergence, cheeger_energy, heat_flow, mwug_rows, write_heat_csv, write_mwug_csv, DivergenceOutcome,
    DEFAULT_DIV_TOL, DIV_NORM_FACTOR,
};
use weighted_sobolev::Error;

const FUNCTION_GRAMMAR: &str =
    "expressions: numbers, pi, x1..x3 (or x, y, z), + - * / ^integer, parentheses, cos, sin, exp, abs, dist(p1, .., pn) = |x - p|";

#[derive(Parser, Debug)]
#[command(name = "weighted-sobolev", version, about = "First-order calculus for stratified measures on R^n")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Measure config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Decreasing grid widths, e.g. "1/16,1/32" or "2^-6,2^-7".
    #[arg(long, visible_alias = "h")]
    scales: String,
    /// Penalty weight eps = l^2 of the local relaxation (default: (max box edge / 4)^2).
    #[arg(long)]
    eps: Option<f64>,
    /// Relative singular value cutoff for fiber spans.
    #[arg(long, default_value_t = DEFAULT_SVD_TOL)]
    svd_tol: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tangent fibers at the finest scale -> fibers.csv
    Fibers {
        #[command(flatten)]
        common: Common,
    },
    /// Minimal weak upper gradient of a function by both routes -> mwug.csv
    Mwug {
        #[command(flatten)]
        common: Common,
        #[arg(long = "f")]
        function: String,
    },
    /// Cheeger energy of a function at every scale -> energy.csv
    Energy {
        #[command(flatten)]
        common: Common,
        #[arg(long = "f")]
        function: String,
    },
    /// Implicit Euler heat flow at the finest scale -> heat.csv
    Heat {
        #[command(flatten)]
        common: Common,
        #[arg(long = "f")]
        function: String,
        #[arg(long = "t", default_value_t = 0.1)]
        t_final: f64,
        #[arg(long, default_value_t = 64)]
        steps: usize,
    },
    /// Weak divergence of a vector field given as comma separated components -> divergence.csv
    Divergence {
        #[command(flatten)]
        common: Common,
        #[arg(long = "f")]
        field: String,
        #[arg(long, default_value_t = DEFAULT_DIV_TOL)]
        tol: f64,
    },
    /// Product of two measures compared with its factors -> report.txt, report.csv, fibers.csv
    Tensor {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, visible_alias = "h")]
        scales: String,
        #[arg(long, default_value = "x1 + x2")]
        f: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Structure checks over a suite (default suite when no config is given) -> report.txt, report.csv
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Syntax(_) | Error::Validation(_) | Error::Dimension(_) | Error::Eval(_) | Error::Precondition(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Lib(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            eprintln!("{FUNCTION_GRAMMAR}");
            eprintln!("scales: comma separated, strictly decreasing, written as 0.0625, 1/16 or 2^-4");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            ExitCode::from(2)
        }
    }
}

fn read_spec(path: &Path) -> Result<MeasureSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(parse_measure_spec(&text)?)
}

fn parse_expr(text: &str) -> Result<Expr, Failure> {
    Ok(Expr::parse(text)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

struct Prepared {
    spec: MeasureSpec,
    schedule: SweepSchedule,
    sweep: Vec<DistributionField>,
}

impl Prepared {
    fn new(c: &Common) -> Result<Self, Failure> {
        let spec = read_spec(&c.config)?;
        let scales = parse_scales(&c.scales)?;
        let mut schedule = SweepSchedule::new(scales);
        let params = match c.eps {
            Some(eps) => FiberParams::from_eps(eps, c.svd_tol),
            None => FiberParams { svd_tol: c.svd_tol, ..FiberParams::for_spec(&spec) },
        };
        schedule = schedule.with_params(params);
        schedule.validate()?;
        let sweep = tangent_sweep(&spec, &schedule)?;
        Ok(Prepared { spec, schedule, sweep })
    }

    fn finest(&self) -> &DistributionField {
        self.sweep.last().expect("nonempty")
    }

    fn space(&self) -> &Arc<GridSpace> {
        &self.finest().space
    }
}

fn meta(command: &str, p: &Prepared, extra: &[(&str, String)]) -> String {
    let params = p.schedule.params_for(&p.spec);
    let mut s = String::new();
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "measure = {}", p.spec.name);
    let _ = writeln!(s, "ambient_dim = {}", p.spec.ambient_dim);
    let _ = writeln!(s, "strata = {}", p.spec.strata.len());
    let _ = writeln!(s, "total_mass = {:.15e}", p.spec.total_mass());
    let _ = writeln!(s, "cantor_truncation_bound = {:.6e}", p.spec.truncation_bound());
    let _ = writeln!(s, "eps = {:.6e}", params.coherence * params.coherence);
    let _ = writeln!(s, "coherence_length = {:.6e}", params.coherence);
    let _ = writeln!(s, "patch_radius = {:.6e}", params.patch_radius);
    let _ = writeln!(s, "null_tol = {}", params.null_tol);
    let _ = writeln!(s, "svd_tol = {}", params.svd_tol);
    let _ = writeln!(s, "stability_window = {}", p.schedule.stability_window);
    for f in &p.sweep {
        let sp = &f.space;
        let _ = writeln!(
            s,
            "scale {:.6e}: cells = {}, dofs = {}, jitter = {:.6e}, unstable_mass_fraction = {:.6e}",
            sp.h(),
            sp.cells.len(),
            sp.dof_count(),
            sp.jitter,
            f.meta.unstable_mass_fraction
        );
        if let Some(w) = &f.meta.warning {
            let _ = writeln!(s, "  warning: {w}");
        }
    }
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn write_meta(dir: &Path, text: &str) -> Result<(), Failure> {
    use std::io::Write;
    let mut f = create(dir, "meta.txt")?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Fibers { common } => {
            let p = Prepared::new(&common)?;
            write_fibers_csv(p.finest(), create(&common.out, "fibers.csv")?)?;
            write_meta(&common.out, &meta("fibers", &p, &[]))?;
            let dims = dim_histogram(p.finest());
            println!("fibers.csv: {} cells, dim histogram {dims:?}", p.finest().cells.len());
            Ok(true)
        }
        Command::Mwug { common, function } => {
            let f = parse_expr(&function)?;
            let p = Prepared::new(&common)?;
            let space = p.space();
            let v = am_distribution(space.clone(), p.schedule.params_for(&p.spec).svd_tol)?;
            let coeffs = project_function(space, &f)?;
            let rows = mwug_rows(space, p.finest(), &v, &f, &coeffs)?;
            write_mwug_csv(space, &rows, create(&common.out, "mwug.csv")?)?;
            write_meta(&common.out, &meta("mwug", &p, &[("f", f.to_string())]))?;
            println!("mwug.csv: {} cells", rows.len());
            Ok(true)
        }
        Command::Energy { common, function } => {
            use std::io::Write;
            let f = parse_expr(&function)?;
            let p = Prepared::new(&common)?;
            let mut out = create(&common.out, "energy.csv")?;
            writeln!(out, "scale,cheeger_energy,smooth_energy")?;
            for field in &p.sweep {
                let space = &field.space;
                let c = project_function(space, &f)?;
                let e = cheeger_energy(space, field, &c)?;
                let s = 0.5 * assemble_stiffness(space).matrix.quad_form(&c);
                writeln!(out, "{:.10e},{:.15e},{:.15e}", space.h(), e, s)?;
                println!("h = {:.6e}: cheeger energy {e:.10e}", space.h());
            }
            write_meta(&common.out, &meta("energy", &p, &[("f", f.to_string())]))?;
            Ok(true)
        }
        Command::Heat { common, function, t_final, steps } => {
            let f = parse_expr(&function)?;
            let p = Prepared::new(&common)?;
            let space = p.space();
            let f0 = project_function(space, &f)?;
            let flow = heat_flow(space, p.finest(), &f0, t_final, steps)?;
            write_heat_csv(&flow, create(&common.out, "heat.csv")?)?;
            let extra = [("f0", f.to_string()), ("t_final", t_final.to_string()), ("steps", steps.to_string())];
            write_meta(&common.out, &meta("heat", &p, &extra))?;
            let last = flow.history.last().expect("history");
            println!("heat.csv: {} steps, final energy {:.10e}, mass {:.15e}", steps, last.energy, last.mass);
            Ok(true)
        }
        Command::Divergence { common, field, tol } => run_divergence(&common, &field, tol),
        Command::Tensor { a, b, scales, f, out } => {
            let family = vec![parse_expr(&f)?];
            let schedule = SweepSchedule::new(parse_scales(&scales)?);
            schedule.validate()?;
            let tc = TensorContext::new(read_spec(&a)?, read_spec(&b)?, schedule)?;
            let th = Thresholds::default();
            let records = vec![harness::verify_tensor_fibers(&tc, &th), harness::verify_tensor_energy(&tc, &th, &family)];
            let report = VerificationReport { records, seed: 0, trials: 0 };
            write_reports(&report, &out)?;
            write_fibers_csv(tc.product.t(), create(&out, "fibers.csv")?)?;
            let prep = Prepared { spec: tc.product.spec.clone(), schedule: tc.product.schedule.clone(), sweep: tc.product.sweep.clone() };
            write_meta(&out, &meta("tensor", &prep, &[("f", f)]))?;
            print_summary(&report);
            Ok(report.passed())
        }
        Command::Verify { config, seed, trials, out } => {
            let mut suite: SuiteConfig = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                    harness::parse_suite(&text, path.parent().unwrap_or(Path::new(".")))?
                }
                None => harness::default_suite(),
            };
            if let Some(s) = seed {
                suite.seed = s;
            }
            if let Some(t) = trials {
                if t == 0 {
                    return Err(Failure::Usage("trials must be at least 1".into()));
                }
                suite.trials = t;
            }
            let report = harness::run_suite(&suite);
            write_reports(&report, &out)?;
            write_meta(&out, &verify_meta(&suite, &report))?;
            print_summary(&report);
            Ok(report.passed())
        }
    }
}

fn dim_histogram(field: &DistributionField) -> Vec<usize> {
    let mut h = vec![0; field.n() + 1];
    for c in &field.cells {
        h[c.dim()] += 1;
    }
    h
}

fn run_divergence(common: &Common, field: &str, tol: f64) -> Outcome {
    use std::io::Write;
    let p = Prepared::new(common)?;
    let space = p.space();
    let n = space.n();
    let comps: Vec<Expr> = field.split(',').map(parse_expr).collect::<Result<_, _>>()?;
    if comps.len() != n {
        return Err(Failure::Usage(format!("field has {} components, the measure lives in R^{n}", comps.len())));
    }
    let w = |_: usize, x: &Point| {
        let mut v = [0.0; 3];
        for (k, e) in comps.iter().enumerate() {
            v[k] = e.eval(&x[..n]);
        }
        v
    };
    let bound = DIV_NORM_FACTOR / p.schedule.params_for(&p.spec).coherence;
    let outcome = check_divergence(space, &w, tol, bound);
    let mut out = create(&common.out, "divergence.csv")?;
    let coords: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    writeln!(out, "dof,{},divergence", coords.join(","))?;
    let accepted = match &outcome {
        DivergenceOutcome::Accepted(pair) => {
            for (d, v) in pair.d.iter().enumerate() {
                let x = space.dof_position(d);
                let xs: Vec<String> = (0..n).map(|k| format!("{:.10}", x[k])).collect();
                writeln!(out, "{d},{},{:.12e}", xs.join(","), v)?;
            }
            println!("accepted: relative residual {:.3e}, |div w| / |w| = {:.3e}", pair.residual, pair.d_norm / pair.w_norm.max(1e-300));
            true
        }
        DivergenceOutcome::Rejected { reason, .. } => {
            println!("rejected: {reason}");
            false
        }
    };
    let extra = [("field", field.to_string()), ("tol", tol.to_string()), ("norm_bound", bound.to_string())];
    write_meta(&common.out, &meta("divergence", &p, &extra))?;
    Ok(accepted)
}

fn write_reports(report: &VerificationReport, dir: &Path) -> Result<(), Failure> {
    report.write_text(create(dir, "report.txt")?)?;
    report.write_csv(create(dir, "report.csv")?)?;
    Ok(())
}

fn verify_meta(suite: &SuiteConfig, report: &VerificationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command = verify");
    let _ = writeln!(s, "seed = {}", suite.seed);
    let _ = writeln!(s, "trials = {}", suite.trials);
    let _ = writeln!(s, "thresholds = {:?}", suite.thresholds);
    let family: Vec<String> = suite.family.iter().map(|f| f.to_string()).collect();
    let _ = writeln!(s, "family = {}", family.join("; "));
    for c in &suite.cases {
        let params = c.schedule.params_for(&c.spec);
        let _ = writeln!(
            s,
            "measure {}: cantor_truncation_bound = {:.6e}, eps = {:.6e}, svd_tol = {}",
            c.spec.name,
            c.spec.truncation_bound(),
            params.coherence * params.coherence,
            params.svd_tol
        );
    }
    let mut seen = std::collections::BTreeMap::new();
    for r in &report.records {
        seen.entry(r.spec.clone()).or_insert(r.unstable_mass_fraction);
    }
    for (name, u) in seen {
        let _ = writeln!(s, "unstable_mass_fraction {name} = {:.6e}", u + 0.0);
    }
    s
}

fn print_summary(report: &VerificationReport) {
    for r in &report.records {
        println!("{:<13} {} / {}", r.status.label(), r.spec, r.name);
    }
    println!("exit status reflects FAIL and ERROR records only");
}
