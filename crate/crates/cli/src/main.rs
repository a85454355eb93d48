mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use heightinterp::curve::{self, canonical_height, gamma_point, generator, height_gap, parse_point, scalar_mul};
use heightinterp::formula::{self, assignment_from_json, assignment_to_json, check_witness};
use heightinterp::heights::{height, holds_e, holds_h, holds_s, log_height, mult_height, parse_rational};
use heightinterp::interp::{self, build_profile_with, Profile};
use heightinterp::reduce::{self, compile, nat_assignment_from_json, nat_assignment_to_json, parse_nat, NatAssignment};
use heightinterp::verify::{self, SuiteOptions, SUITES};
use heightinterp::{Integer, Rational};

use config::{Config, Overrides, PROFILE_ENV};

#[derive(Parser)]
#[command(name = "heightinterp", version, about = "Heights over Q and an interpretation of N in Q with height comparisons")]
struct Cli {
    /// key=value settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print JSON instead of text
    #[arg(long, global = true)]
    json: bool,
    /// Multiplier N of the subgroup [N]E(Q)
    #[arg(long = "N", global = true)]
    n: Option<u64>,
    /// Largest natural number the profile must encode
    #[arg(long = "mmax", global = true)]
    m_max: Option<u64>,
    /// Bound on |hhat - h| for the curve
    #[arg(long = "cE", global = true)]
    c_e: Option<String>,
    /// Width of printed log-height intervals
    #[arg(long, global = true)]
    eps: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Heights and the H, E, S relations: `h q`, `H xs -- ys`, `E xs -- ys`, `S x y z`
    Height {
        relation: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
    /// Arithmetic on y^2 = x^3 + 2
    Curve {
        #[command(subcommand)]
        cmd: CurveCmd,
    },
    /// Certificate for theta^{-1}(m)
    Encode {
        m: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// theta of a certificate file or a rational
    Decode { input: String },
    /// Compile a sentence over N into one over Q
    Compile {
        formula: Option<PathBuf>,
        #[arg(long)]
        sentence_out: Option<PathBuf>,
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
    /// Check a witness against a sentence
    Check { sentence: PathBuf, witness: Option<PathBuf> },
    /// Build a witness for the compiled sentence from values over N
    WitnessUp {
        formula: Option<PathBuf>,
        assignment: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a witness of the compiled sentence back to N
    WitnessDown { formula: Option<PathBuf>, witness: Option<PathBuf> },
    /// Run the invariant suites
    VerifyLemmas(VerifyArgs),
    /// Slack constraints on D for a given c_E
    Slack {
        #[arg(long = "check-N")]
        check_n: Option<u64>,
    },
    /// Build and print the interpretation profile
    Profile,
}

#[derive(Subcommand)]
enum CurveCmd {
    /// [n]P for P = P1 unless given
    Mul {
        #[arg(allow_hyphen_values = true, value_name = "N")]
        multiplier: String,
        #[arg(long)]
        point: Option<String>,
    },
    /// P + Q
    Add { p: String, q: String },
    /// Interval for the canonical height
    Hhat {
        #[arg(long, default_value_t = 12)]
        k: u32,
        #[arg(long)]
        point: Option<String>,
    },
    /// k^2 hhat(P1) - h([k]P1) for 1 <= k <= range
    Gap {
        #[arg(long, default_value_t = 12)]
        range: i64,
        #[arg(long, default_value_t = 12)]
        k: u32,
    },
    /// Q_k = [N k] P1
    Gamma {
        #[arg(allow_hyphen_values = true)]
        k: i64,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// heights, curve, gadgets, interp, reduce or all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Doublings for the canonical height in the curve suite
    #[arg(long, default_value_t = 10)]
    k: u32,
    /// Largest value fed to the relation gadgets
    #[arg(long, default_value_t = 2)]
    relations: u64,
    /// Search bound for the reduction suite
    #[arg(long, default_value_t = 12)]
    bound: u64,
}

/// A command's verdict with its text and JSON renderings.
struct Outcome {
    ok: bool,
    text: String,
    json: Value,
}

impl Outcome {
    fn ok(text: String, json: Value) -> Outcome {
        Outcome { ok: true, text, json }
    }

    fn verdict(ok: bool, text: String, json: Value) -> Outcome {
        Outcome { ok, text, json }
    }
}

fn rationals(xs: &[String]) -> Result<Vec<Rational>> {
    xs.iter().map(|x| parse_rational(x).with_context(|| format!("`{x}`"))).collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn interval(iv: &heightinterp::CertifiedReal) -> Value {
    json!({ "lo": iv.lo.to_f64(), "hi": iv.hi.to_f64(), "lo_exact": iv.lo.to_string(), "hi_exact": iv.hi.to_string() })
}

fn profile(cfg: &Config) -> Result<Profile> {
    Ok(build_profile_with(cfg.n, cfg.m_max, &cfg.c_e)?)
}

fn pick(given: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    given.or_else(|| fallback.clone()).ok_or_else(|| anyhow!("no {what} file given"))
}

fn cmd_height(cfg: &Config, relation: &str, xs: &[String], ys: &[String]) -> Result<Outcome> {
    match relation {
        "h" => {
            let [q] = xs else { bail!("usage: height h <q>") };
            let q = parse_rational(q)?;
            let h = height(&q);
            let log = log_height(&h, &cfg.eps);
            Ok(Outcome::ok(
                format!("H({q}) = {}\nh({q}) in {log}", h.value()),
                json!({ "q": q.to_string(), "H": h.value().to_string(), "h": interval(&log) }),
            ))
        }
        "H" | "E" => {
            if xs.is_empty() || ys.is_empty() {
                bail!("usage: height {relation} <xs...> -- <ys...>");
            }
            let (x, y) = (rationals(xs)?, rationals(ys)?);
            let holds = if relation == "H" { holds_h(&x, &y)? } else { holds_e(&x, &y)? };
            let (hx, hy) = (mult_height(&x)?, mult_height(&y)?);
            Ok(Outcome::verdict(
                holds,
                format!("H(x) = {}, H(y) = {}: {holds}", hx.value(), hy.value()),
                json!({ "relation": relation, "H_x": hx.value().to_string(), "H_y": hy.value().to_string(), "holds": holds }),
            ))
        }
        "S" => {
            let [x, y, z] = xs else { bail!("usage: height S <x> <y> <z>") };
            let (x, y, z) = (parse_rational(x)?, parse_rational(y)?, parse_rational(z)?);
            let holds = holds_s(&x, &y, &z);
            Ok(Outcome::verdict(holds, holds.to_string(), json!({ "relation": "S", "holds": holds })))
        }
        other => bail!("unknown relation `{other}`: use h, H, E or S"),
    }
}

fn point_or_p1(p: &Option<String>) -> Result<curve::Point> {
    Ok(match p {
        Some(s) => parse_point(s)?,
        None => generator(),
    })
}

fn cmd_curve(cfg: &Config, cmd: CurveCmd) -> Result<Outcome> {
    match cmd {
        CurveCmd::Mul { multiplier: n, point } => {
            let n = Integer::from_str_radix(&n, 10).with_context(|| format!("`{n}` is not an integer"))?;
            let p = scalar_mul(&n, &point_or_p1(&point)?)?;
            Ok(Outcome::ok(p.to_string(), json!({ "point": p.to_string() })))
        }
        CurveCmd::Add { p, q } => {
            let s = curve::add(&parse_point(&p)?, &parse_point(&q)?)?;
            Ok(Outcome::ok(s.to_string(), json!({ "point": s.to_string() })))
        }
        CurveCmd::Hhat { k, point } => {
            let iv = canonical_height(&point_or_p1(&point)?, k)?;
            Ok(Outcome::ok(
                format!("hhat in {iv} (width {:.3e}, k = {k})", iv.width().to_f64()),
                json!({ "k": k, "hhat": interval(&iv) }),
            ))
        }
        CurveCmd::Gap { range, k } => {
            let c = curve::constants();
            let hhat = canonical_height(&generator(), k)?;
            let mut lines = Vec::new();
            let mut rows = Vec::new();
            let mut all = true;
            for j in 1..=range {
                let g = height_gap(&generator(), j, &hhat)?;
                let inside = g.lo > c.gap_lower && g.hi < c.gap_upper;
                all &= inside;
                lines.push(format!("{j:>3}  {g}  {}", if inside { "inside" } else { "OUTSIDE" }));
                rows.push(json!({ "k": j, "gap": interval(&g), "inside": inside }));
            }
            lines.push(format!("bounds ({}, {}): {}", c.gap_lower.to_f64(), c.gap_upper.to_f64(), if all { "all inside" } else { "violated" }));
            Ok(Outcome::verdict(all, lines.join("\n"), json!({ "gaps": rows, "all_inside": all })))
        }
        CurveCmd::Gamma { k } => {
            let p = gamma_point(k, cfg.n);
            Ok(Outcome::ok(p.to_string(), json!({ "N": cfg.n, "k": k, "point": p.to_string() })))
        }
    }
}

fn cmd_encode(cfg: &Config, m: u64, out: Option<PathBuf>) -> Result<Outcome> {
    let p = profile(cfg)?;
    let c = interp::encode(m, &p)?;
    let j = interp::certificate_to_json(&c);
    let text = match out {
        Some(path) => {
            write(&path, &pretty(&j))?;
            format!("wrote certificate for {m} to {}", path.display())
        }
        None => pretty(&j),
    };
    Ok(Outcome::ok(text, j))
}

fn cmd_decode(cfg: &Config, input: &str) -> Result<Outcome> {
    let p = profile(cfg)?;
    let q = if Path::new(input).is_file() {
        let c = interp::certificate_from_json(&read_json(Path::new(input))?)?;
        interp::validate_certificate(&c, &p)?;
        c.q
    } else {
        parse_rational(input)?
    };
    let m = interp::decode(&q, &p)?;
    Ok(Outcome::ok(m.to_string(), json!({ "m": m })))
}

fn source(path: &Path) -> Result<heightinterp::reduce::NatFormula> {
    let f = parse_nat(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    reduce::check_source(&f)?;
    Ok(f)
}

fn cmd_compile(cfg: &Config, formula: PathBuf, sentence_out: Option<PathBuf>, map_out: Option<PathBuf>) -> Result<Outcome> {
    let p = profile(cfg)?;
    let out = compile(&source(&formula)?, &p)?;
    let j = reduce::compile_output_to_json(&out);
    let sentence = out.sentence.render();
    let map = pretty(&j["var_map"]);
    let mut text = Vec::new();
    match sentence_out {
        Some(path) => {
            write(&path, &sentence)?;
            text.push(format!("sentence ({} atoms) written to {}", out.sentence.atom_count(), path.display()));
        }
        None => text.push(sentence),
    }
    match map_out {
        Some(path) => {
            write(&path, &map)?;
            text.push(format!("var_map written to {}", path.display()));
        }
        None => text.push(map),
    }
    Ok(Outcome::ok(text.join("\n"), j))
}

fn cmd_check(sentence: &Path, witness: &Path) -> Result<Outcome> {
    let f = formula::parse(&read(sentence)?).with_context(|| format!("in {}", sentence.display()))?;
    let w = assignment_from_json(&read_json(witness)?)?;
    let ok = check_witness(&f, &w)?;
    Ok(Outcome::verdict(ok, if ok { "accept" } else { "reject" }.into(), json!({ "accepted": ok })))
}

fn cmd_witness_up(cfg: &Config, formula: PathBuf, assignment: Option<PathBuf>, out: Option<PathBuf>) -> Result<Outcome> {
    let p = profile(cfg)?;
    let a = match assignment {
        Some(path) => nat_assignment_from_json(&read_json(&path)?)?,
        None => NatAssignment::new(),
    };
    let w = reduce::witness_up(&source(&formula)?, &a, &p)?;
    let j = assignment_to_json(&w);
    let text = match out {
        Some(path) => {
            write(&path, &pretty(&j))?;
            format!("witness with {} variables written to {}", w.len(), path.display())
        }
        None => pretty(&j),
    };
    Ok(Outcome::ok(text, j))
}

fn cmd_witness_down(cfg: &Config, formula: PathBuf, witness: PathBuf) -> Result<Outcome> {
    let p = profile(cfg)?;
    let out = compile(&source(&formula)?, &p)?;
    let w = assignment_from_json(&read_json(&witness)?)?;
    let a = reduce::witness_down(&w, &out, &p)?;
    let j = nat_assignment_to_json(&a);
    Ok(Outcome::ok(pretty(&j), j))
}

fn cmd_verify(cfg: &Config, args: VerifyArgs) -> Result<Outcome> {
    let names: Vec<&str> = if args.suite == "all" { SUITES.to_vec() } else { vec![args.suite.as_str()] };
    if let Some(bad) = names.iter().find(|n| !SUITES.contains(n)) {
        bail!("unknown suite `{bad}`: use one of {} or all", SUITES.join(", "));
    }
    let p = if names.contains(&"interp") { Some(profile(cfg)?) } else { None };
    let opts = SuiteOptions { samples: args.samples, seed: args.seed, hhat_k: args.k, relations: args.relations, bound: args.bound };
    let mut lines = Vec::new();
    let mut reports = Vec::new();
    let mut ok = true;
    for name in names {
        let r = verify::run_suite(name, p.as_ref(), &opts).expect("known suite");
        ok &= r.ok();
        lines.push(format!("{} ({:.1}s): {}", r.suite, r.seconds, if r.ok() { "pass" } else { "FAIL" }));
        for c in &r.checks {
            let mark = if c.ok() { "pass" } else { "FAIL" };
            let mut line = format!("  {mark}  {} [{} cases, {} failures]", c.name, c.cases, c.failures);
            if !c.ok() {
                line.push_str(&format!(" first: {}", c.detail));
            }
            lines.push(line);
        }
        reports.push(verify::report_to_json(&r));
    }
    Ok(Outcome::verdict(ok, lines.join("\n"), json!({ "ok": ok, "suites": reports })))
}

fn cmd_slack(cfg: &Config, check_n: Option<u64>) -> Result<Outcome> {
    let r = interp::slack_analysis(&cfg.c_e);
    let mut lines = vec![format!("c_E = {}", r.c_e)];
    for c in &r.constraints {
        let mid = c.intermediate.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        lines.push(format!("  {:<14} {:<44} intermediate {:>6}  D > {}", c.name, c.source, mid, c.requires));
    }
    for c in &r.completeness {
        lines.push(format!("  {:<40} needs {} allows {} {}", c.name, c.needed, c.allowed, if c.ok() { "ok" } else { "VIOLATED" }));
    }
    lines.push(format!("B_dec = {}, D_min = {}", r.b_dec, r.d_min));
    let mut j = interp::slack_to_json(&r);
    let mut ok = r.completeness.iter().all(|c| c.ok());
    if let Some(n) = check_n {
        let verdict = build_profile_with(n, 1, &cfg.c_e);
        let accepted = verdict.is_ok();
        ok &= accepted;
        lines.push(match &verdict {
            Ok(p) => format!("N = {n}: accepted, D in {}", p.d),
            Err(e) => format!("N = {n}: rejected ({e})"),
        });
        j["check"] = json!({ "N": n, "accepted": accepted });
    }
    Ok(Outcome::verdict(ok, lines.join("\n"), j))
}

fn cmd_profile(cfg: &Config) -> Result<Outcome> {
    let p = profile(cfg)?;
    let j = interp::profile_to_json(&p);
    Ok(Outcome::ok(pretty(&j), j))
}

fn run(cli: Cli) -> Result<Outcome> {
    let env_file = std::env::var_os(PROFILE_ENV).map(PathBuf::from);
    let flags = Overrides { n: cli.n, m_max: cli.m_max, c_e: cli.c_e.clone(), eps: cli.eps.clone() };
    let cfg = Config::resolve(cli.config.as_deref(), env_file.as_deref(), &flags)?;
    match cli.command {
        Command::Height { relation, args } => {
            let (xs, ys) = match args.iter().position(|a| a == "--") {
                Some(i) => (&args[..i], &args[i + 1..]),
                None => (&args[..], &[][..]),
            };
            cmd_height(&cfg, &relation, xs, ys)
        }
        Command::Curve { cmd } => cmd_curve(&cfg, cmd),
        Command::Encode { m, out } => cmd_encode(&cfg, m, out),
        Command::Decode { input } => cmd_decode(&cfg, &input),
        Command::Compile { formula, sentence_out, map_out } => {
            cmd_compile(&cfg, pick(formula, &cfg.formula, "formula")?, sentence_out, map_out)
        }
        Command::Check { sentence, witness } => cmd_check(&sentence, &pick(witness, &cfg.witness, "witness")?),
        Command::WitnessUp { formula, assignment, out } => {
            cmd_witness_up(&cfg, pick(formula, &cfg.formula, "formula")?, assignment, out)
        }
        Command::WitnessDown { formula, witness } => cmd_witness_down(
            &cfg,
            pick(formula, &cfg.formula, "formula")?,
            pick(witness, &cfg.witness, "witness")?,
        ),
        Command::VerifyLemmas(args) => cmd_verify(&cfg, args),
        Command::Slack { check_n } => cmd_slack(&cfg, check_n),
        Command::Profile => cmd_profile(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(o) => {
            let text = if json { pretty(&o.json) } else { o.text };
            // a closed pipe is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{text}");
            if o.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            if json {
                println!("{}", pretty(&json!({ "error": format!("{e:#}") })));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
