//! Profile settings from flags, a key=value file, the
//! `HEIGHTINTERP_PROFILE` file, and defaults, in that order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use heightinterp::heights::parse_rational;
use heightinterp::Rational;

pub const PROFILE_ENV: &str = "HEIGHTINTERP_PROFILE";

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub n: u64,
    pub m_max: u64,
    pub c_e: Rational,
    /// Width of printed log-height intervals.
    pub eps: Rational,
    pub formula: Option<PathBuf>,
    pub witness: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n: 200,
            m_max: 5,
            c_e: Rational::from(4),
            eps: Rational::from((1, 1_000_000_000_000u64)),
            formula: None,
            witness: None,
        }
    }
}

/// Values given on the command line; `None` means not given.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub n: Option<u64>,
    pub m_max: Option<u64>,
    pub c_e: Option<String>,
    pub eps: Option<String>,
}

pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn rational(key: &str, v: &str) -> Result<Rational> {
    if let Ok(q) = parse_rational(v) {
        return Ok(q);
    }
    // decimals and exponents such as 1e-12
    let f: f64 = v.parse().map_err(|_| anyhow!("{key}: `{v}` is not a number"))?;
    Rational::from_f64(f).ok_or_else(|| anyhow!("{key}: `{v}` is not finite"))
}

impl Config {
    fn apply(&mut self, kv: &BTreeMap<String, String>, base: &Path) -> Result<()> {
        for (k, v) in kv {
            match k.as_str() {
                "N" | "n" => self.n = v.parse().with_context(|| format!("N: `{v}`"))?,
                "m_max" | "mmax" => self.m_max = v.parse().with_context(|| format!("m_max: `{v}`"))?,
                "c_E" | "cE" | "c_e" => self.c_e = rational(k, v)?,
                "eps" => self.eps = rational(k, v)?,
                "formula" => self.formula = Some(base.join(v)),
                "witness" => self.witness = Some(base.join(v)),
                other => bail!("unknown config key `{other}`"),
            }
        }
        Ok(())
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let kv = parse_file(&text).with_context(|| format!("in {}", path.display()))?;
        self.apply(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(file: Option<&Path>, env_file: Option<&Path>, flags: &Overrides) -> Result<Config> {
        let mut c = Config::default();
        if let Some(p) = env_file {
            c.apply_file(p)?;
        }
        if let Some(p) = file {
            c.apply_file(p)?;
        }
        if let Some(n) = flags.n {
            c.n = n;
        }
        if let Some(m) = flags.m_max {
            c.m_max = m;
        }
        if let Some(v) = &flags.c_e {
            c.c_e = rational("cE", v)?;
        }
        if let Some(v) = &flags.eps {
            c.eps = rational("eps", v)?;
        }
        if c.eps <= 0 {
            bail!("eps must be positive");
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let env = dir.path().join("env.cfg");
        let file = dir.path().join("run.cfg");
        std::fs::write(&env, "N = 30\nm_max = 7\ncE = 4\n").unwrap();
        std::fs::write(&file, "# local\nm_max=9\nformula = f.sexp\n").unwrap();
        let c = Config::resolve(Some(&file), Some(&env), &Overrides::default()).unwrap();
        assert_eq!((c.n, c.m_max), (30, 9));
        assert_eq!(c.formula, Some(dir.path().join("f.sexp")));
        let flags = Overrides { m_max: Some(3), eps: Some("1e-6".into()), ..Default::default() };
        let c = Config::resolve(Some(&file), Some(&env), &flags).unwrap();
        assert_eq!(c.m_max, 3);
        assert!(c.eps < Rational::from((1, 100_000)));
        assert_eq!(Config::resolve(None, None, &Overrides::default()).unwrap(), Config::default());
    }

    #[test]
    fn bad_lines() {
        assert!(parse_file("N 30").is_err());
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.cfg");
        std::fs::write(&f, "colour = red\n").unwrap();
        assert!(Config::resolve(Some(&f), None, &Overrides::default()).is_err());
    }
}
