use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::kv::{split_list, KvDoc};
use crate::time::{Timestamp, TimestampFormat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Laplace { loc: f64, scale: f64 },
    Categorical { values: Vec<(String, f64)> },
}

impl Distribution {
    pub fn is_numeric(&self) -> bool {
        !matches!(self, Distribution::Categorical { .. })
    }

    fn parse(raw: &str) -> Result<Self, SynthError> {
        let bad = || SynthError::Spec(format!("bad distribution `{raw}`"));
        let raw = raw.trim();
        let open = raw.find('(').ok_or_else(bad)?;
        let args = raw[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let name = raw[..open].trim();
        let nums = || -> Result<Vec<f64>, SynthError> {
            args.split(',').map(|a| a.trim().parse::<f64>().map_err(|_| bad())).collect()
        };
        let d = match name {
            "uniform" => match nums()?[..] {
                [lo, hi] if lo < hi => Distribution::Uniform { lo, hi },
                _ => return Err(bad()),
            },
            "normal" => match nums()?[..] {
                [mean, sd] if sd >= 0.0 => Distribution::Normal { mean, sd },
                _ => return Err(bad()),
            },
            "laplace" => match nums()?[..] {
                [loc, scale] if scale > 0.0 => Distribution::Laplace { loc, scale },
                _ => return Err(bad()),
            },
            "categorical" => {
                let mut values = Vec::new();
                for part in args.split(',') {
                    let (v, p) = part.split_once(':').ok_or_else(bad)?;
                    let p: f64 = p.trim().parse().map_err(|_| bad())?;
                    if !(p > 0.0) || v.trim().is_empty() {
                        return Err(bad());
                    }
                    values.push((v.trim().to_string(), p));
                }
                if values.is_empty() {
                    return Err(bad());
                }
                Distribution::Categorical { values }
            }
            _ => return Err(bad()),
        };
        if let Distribution::Uniform { lo, hi }
        | Distribution::Normal { mean: lo, sd: hi }
        | Distribution::Laplace { loc: lo, scale: hi } = &d
        {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(bad());
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    Const,
    Var(String),
    /// `max(0, f - knot)`
    Hinge(String, f64),
    /// `1[f > knot]`
    Step(String, f64),
    /// `1[f == value]` for categorical features.
    Is(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub basis: Basis,
}

/// Piecewise-linear expression: a sum of scaled basis functions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub terms: Vec<Term>,
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr { terms: vec![Term { coef: c, basis: Basis::Const }] }
    }

    pub fn parse(raw: &str) -> Result<Self, SynthError> {
        let s: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(SynthError::Spec("empty expression".into()));
        }
        let bytes = s.as_bytes();
        let mut pieces = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        for i in 0..bytes.len() {
            match bytes[i] {
                b'(' => depth += 1,
                b')' => depth -= 1,
                b'+' | b'-' if depth == 0 && i > start => {
                    // Exponent sign inside a number literal.
                    let exp = i >= 2
                        && matches!(bytes[i - 1], b'e' | b'E')
                        && (bytes[i - 2].is_ascii_digit() || bytes[i - 2] == b'.')
                        && s[start..i - 1].trim_start_matches(['+', '-']).parse::<f64>().is_ok();
                    let after_star = bytes[i - 1] == b'*';
                    if !exp && !after_star {
                        pieces.push(&s[start..i]);
                        start = i;
                    }
                }
                _ => {}
            }
            if depth < 0 {
                return Err(SynthError::Spec(format!("unbalanced parentheses in `{raw}`")));
            }
        }
        if depth != 0 {
            return Err(SynthError::Spec(format!("unbalanced parentheses in `{raw}`")));
        }
        pieces.push(&s[start..]);
        let terms = pieces.into_iter().map(|p| Term::parse(p, raw)).collect::<Result<Vec<_>, _>>()?;
        Ok(Expr { terms })
    }

    pub fn eval(&self, num: &BTreeMap<String, f64>, cat: &BTreeMap<String, String>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coef
                    * match &t.basis {
                        Basis::Const => 1.0,
                        Basis::Var(f) => num[f],
                        Basis::Hinge(f, k) => (num[f] - k).max(0.0),
                        Basis::Step(f, k) => (num[f] > *k) as u8 as f64,
                        Basis::Is(f, v) => (cat[f] == *v) as u8 as f64,
                    }
            })
            .sum()
    }

    fn features(&self) -> impl Iterator<Item = (&str, bool)> {
        self.terms.iter().filter_map(|t| match &t.basis {
            Basis::Const => None,
            Basis::Var(f) | Basis::Hinge(f, _) | Basis::Step(f, _) => Some((f.as_str(), true)),
            Basis::Is(f, _) => Some((f.as_str(), false)),
        })
    }
}

impl Term {
    fn parse(piece: &str, raw: &str) -> Result<Term, SynthError> {
        let bad = || SynthError::Spec(format!("cannot parse term `{piece}` in `{raw}`"));
        let (sign, body) = match piece.as_bytes().first() {
            Some(b'-') => (-1.0, &piece[1..]),
            Some(b'+') => (1.0, &piece[1..]),
            _ => (1.0, piece),
        };
        if body.is_empty() {
            return Err(bad());
        }
        let (coef, basis_txt) = match body.split_once('*') {
            Some((c, b)) => (c.parse::<f64>().map_err(|_| bad())?, b),
            None => match body.parse::<f64>() {
                Ok(c) => return finite(Term { coef: sign * c, basis: Basis::Const }, bad),
                Err(_) => (1.0, body),
            },
        };
        let basis = if let Some(open) = basis_txt.find('(') {
            let name = &basis_txt[..open];
            let args = basis_txt[open + 1..].strip_suffix(')').ok_or_else(bad)?;
            let (f, k) = args.split_once(',').ok_or_else(bad)?;
            if !is_ident(f) {
                return Err(bad());
            }
            match name {
                "hinge" => Basis::Hinge(f.into(), k.parse().map_err(|_| bad())?),
                "step" => Basis::Step(f.into(), k.parse().map_err(|_| bad())?),
                "is" if !k.is_empty() => Basis::Is(f.into(), k.into()),
                _ => return Err(bad()),
            }
        } else if is_ident(basis_txt) {
            Basis::Var(basis_txt.into())
        } else {
            return Err(bad());
        };
        finite(Term { coef: sign * coef, basis }, bad)
    }
}

fn finite(t: Term, bad: impl Fn() -> SynthError) -> Result<Term, SynthError> {
    let knot_ok = match &t.basis {
        Basis::Hinge(_, k) | Basis::Step(_, k) => k.is_finite(),
        _ => true,
    };
    if t.coef.is_finite() && knot_ok {
        Ok(t)
    } else {
        Err(bad())
    }
}

fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
}

/// Structural model and trace layout of a synthetic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub seed: u64,
    pub start_activity: String,
    pub end_activity: String,
    pub treatment_activity: String,
    pub post_activity: String,
    /// Filler labels drawn before the decision point.
    pub activities: Vec<String>,
    pub resources: Vec<String>,
    pub start_date: Timestamp,
    pub arrivals_per_day: f64,
    /// Mean gap between events before the decision point, in days.
    pub mean_gap_days: f64,
    pub max_fillers: usize,
    /// Case-level features, emitted as case attributes.
    pub features: Vec<(String, Distribution)>,
    /// Effect theta(x) in days.
    pub effect: Expr,
    /// Cycle time without treatment, before noise, in days.
    pub baseline: Expr,
    /// Treatment logit.
    pub propensity: Expr,
    pub noise_y: f64,
    /// Standard deviation of extra logit noise.
    pub noise_t: f64,
    pub hidden_strength_t: f64,
    pub hidden_strength_y: f64,
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let doc = KvDoc::parse(text)?;
        let mut features = Vec::new();
        for (k, v) in doc.with_prefix("feature.") {
            features.push((k.to_string(), Distribution::parse(v)?));
        }
        let known = [
            "n_cases",
            "seed",
            "start_activity",
            "end_activity",
            "treatment_activity",
            "post_activity",
            "activities",
            "resources",
            "start_date",
            "arrivals_per_day",
            "mean_gap_days",
            "max_fillers",
            "effect",
            "baseline",
            "propensity",
            "noise_y",
            "noise_t",
            "hidden.strength_t",
            "hidden.strength_y",
        ];
        if let Some(k) = doc.keys().find(|k| !k.starts_with("feature.") && !known.contains(k)) {
            return Err(SynthError::Spec(format!("unknown key `{k}`")));
        }
        let list_or = |key: &str, default: &[&str]| -> Result<Vec<String>, SynthError> {
            Ok(match doc.get(key)? {
                Some(v) => split_list(v),
                None => default.iter().map(|s| s.to_string()).collect(),
            })
        };
        let start_date = match doc.get("start_date")? {
            Some(v) => {
                TimestampFormat::Iso8601.parse(v).map_err(|_| SynthError::Spec(format!("bad start_date `{v}`")))?
            }
            None => Timestamp(1_577_836_800_000),
        };
        let spec = SyntheticSpec {
            n_cases: doc.parse_or("n_cases", 1000)?,
            seed: doc.parse_or("seed", 0)?,
            start_activity: doc.get("start_activity")?.unwrap_or("Start").to_string(),
            end_activity: doc.get("end_activity")?.unwrap_or("End").to_string(),
            treatment_activity: doc.get("treatment_activity")?.unwrap_or("Treat").to_string(),
            post_activity: doc.get("post_activity")?.unwrap_or("Follow up").to_string(),
            activities: list_or("activities", &["Check", "Review"])?,
            resources: list_or("resources", &["r1", "r2", "r3"])?,
            start_date,
            arrivals_per_day: doc.parse_or("arrivals_per_day", 20.0)?,
            mean_gap_days: doc.parse_or("mean_gap_days", 0.25)?,
            max_fillers: doc.parse_or("max_fillers", 2)?,
            features,
            effect: Expr::parse(doc.require("effect")?)?,
            baseline: Expr::parse(doc.require("baseline")?)?,
            propensity: match doc.get("propensity")? {
                Some(v) => Expr::parse(v)?,
                None => Expr::constant(0.0),
            },
            noise_y: doc.parse_or("noise_y", 1.0)?,
            noise_t: doc.parse_or("noise_t", 0.0)?,
            hidden_strength_t: doc.parse_or("hidden.strength_t", 0.0)?,
            hidden_strength_y: doc.parse_or("hidden.strength_y", 0.0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.n_cases == 0 {
            return bad("n_cases must be positive".into());
        }
        if self.activities.is_empty() || self.resources.is_empty() {
            return bad("activities and resources must be non-empty".into());
        }
        let labels = [&self.start_activity, &self.end_activity, &self.treatment_activity, &self.post_activity];
        for (i, a) in labels.iter().enumerate() {
            if a.is_empty() || labels[i + 1..].contains(a) || self.activities.contains(a) {
                return bad(format!("activity label `{a}` is empty or reused"));
            }
        }
        for (name, v) in [("arrivals_per_day", self.arrivals_per_day), ("mean_gap_days", self.mean_gap_days)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("noise_y", self.noise_y),
            ("noise_t", self.noise_t),
            ("hidden.strength_t", self.hidden_strength_t),
            ("hidden.strength_y", self.hidden_strength_y),
        ] {
            if !v.is_finite() || (name.starts_with("noise") && v < 0.0) {
                return bad(format!("{name} is invalid"));
            }
        }
        let reserved = ["case_id", "activity", "timestamp", "resource", "load"];
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &self.features {
            if !is_ident(name) || reserved.contains(&name.as_str()) || !seen.insert(name) {
                return bad(format!("invalid or duplicate feature name `{name}`"));
            }
        }
        for e in [&self.effect, &self.baseline, &self.propensity] {
            for (f, numeric) in e.features() {
                match self.features.iter().find(|(n, _)| n == f) {
                    None => return bad(format!("expression uses unknown feature `{f}`")),
                    Some((_, d)) if d.is_numeric() != numeric => {
                        return bad(format!("feature `{f}` used with the wrong kind"))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_terms() {
        let e = Expr::parse("-5 - 10*x1 + 2*hinge(w, 0.5) + 1e-3*step(w,1) + 3*is(ch,web) + w").unwrap();
        assert_eq!(e.terms.len(), 6);
        let mut num = BTreeMap::new();
        num.insert("x1".to_string(), 0.5);
        num.insert("w".to_string(), 1.5);
        let mut cat = BTreeMap::new();
        cat.insert("ch".to_string(), "web".to_string());
        let v = e.eval(&num, &cat);
        assert!((v - (-5.0 - 5.0 + 2.0 + 1e-3 + 3.0 + 1.5)).abs() < 1e-12);
        assert_eq!(Expr::parse("2.5e-1*x").unwrap().terms[0].coef, 0.25);
        assert_eq!(Expr::parse("3*-2").ok(), None);
    }

    #[test]
    fn bad_expressions() {
        for s in ["", "2*", "hinge(x)", "foo(x,1)", "(x", "1 + + 2", "2*3x"] {
            assert!(Expr::parse(s).is_err(), "{s}");
        }
    }

    #[test]
    fn spec_validation() {
        let ok = "n_cases = 10\nfeature.x1 = uniform(0,1)\neffect = -5 - 10*x1\nbaseline = 20\n";
        assert!(SyntheticSpec::parse(ok).is_ok());
        assert!(SyntheticSpec::parse("effect = y\nbaseline = 1\n").is_err());
        assert!(SyntheticSpec::parse("feature.c = categorical(a:1)\neffect = c\nbaseline = 1\n").is_err());
        assert!(SyntheticSpec::parse("effect = 0\nbaseline = 1\nbogus = 2\n").is_err());
    }
}
