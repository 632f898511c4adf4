//! CSV formats.
//!
//! Predictions: `prediction,state[,weight]`, header optional. Header names
//! may also be `q` or `p` for the prediction, `theta` or `y` for the state,
//! `w` for the weight. Couplings: `q,b,state,mass`. A path of `-` reads
//! stdin.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};

use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Coupling, CouplingAtom, EmpiricalJoint, Sample};

pub fn open_input(path: &str) -> Result<Box<dyn Read>> {
    if path == "-" {
        Ok(Box::new(io::stdin().lock()))
    } else {
        let f = File::open(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Maps each wanted column to its position, from a header row if there is
/// one. Returns whether the first record was a header.
fn layout(first: &csv::StringRecord, names: &[&[&str]], line: u64) -> Result<(Vec<Option<usize>>, bool)> {
    let is_header = first.get(0).is_some_and(|f| f.trim().parse::<f64>().is_err());
    if !is_header {
        return Ok(((0..names.len()).map(Some).collect(), false));
    }
    let mut pos = vec![None; names.len()];
    for (i, field) in first.iter().enumerate() {
        let f = field.trim().to_ascii_lowercase();
        match names.iter().position(|aliases| aliases.contains(&f.as_str())) {
            Some(k) => pos[k] = Some(i),
            None => return Err(parse_err(line, format!("unknown column '{field}'"))),
        }
    }
    Ok((pos, true))
}

fn records<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
}

fn field(rec: &csv::StringRecord, pos: Option<usize>, name: &str, line: u64) -> Result<Option<f64>> {
    let Some(i) = pos else { return Ok(None) };
    match rec.get(i) {
        None | Some("") => Err(parse_err(line, format!("missing {name}"))),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| parse_err(line, format!("{name} '{s}' is not a number"))),
    }
}

fn state(v: f64, line: u64) -> Result<u8> {
    if v == 0.0 || v == 1.0 {
        Ok(v as u8)
    } else {
        Err(parse_err(line, format!("state {v} is not 0 or 1")))
    }
}

fn in_unit(v: f64, name: &str, line: u64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(parse_err(line, format!("{name} {v} outside [0,1]")))
    }
}

/// Reads prediction rows in file order.
pub fn read_samples<R: Read>(reader: R) -> Result<Vec<Sample>> {
    const NAMES: &[&[&str]] = &[&["prediction", "q", "p"], &["state", "theta", "y"], &["weight", "w"]];
    let mut rdr = records(reader);
    let mut out = Vec::new();
    let mut pos: Option<Vec<Option<usize>>> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if pos.is_none() {
            let (p, header) = layout(&rec, NAMES, line)?;
            if p[0].is_none() || p[1].is_none() {
                return Err(parse_err(line, "need prediction and state columns"));
            }
            let with_weight = if header { p } else { vec![Some(0), Some(1), (rec.len() > 2).then_some(2)] };
            pos = Some(with_weight);
            if header {
                continue;
            }
        }
        let p = pos.as_ref().expect("layout set");
        let q = in_unit(field(&rec, p[0], "prediction", line)?.unwrap(), "prediction", line)?;
        let s = state(field(&rec, p[1], "state", line)?.unwrap(), line)?;
        let w = match p[2] {
            Some(i) if rec.get(i).is_some_and(|s| !s.is_empty()) => field(&rec, Some(i), "weight", line)?.unwrap(),
            _ => 1.0,
        };
        if !(w >= 0.0) || !w.is_finite() {
            return Err(parse_err(line, format!("weight {w} is not a nonnegative real")));
        }
        out.push(Sample::weighted(q, s, w));
    }
    if out.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    Ok(out)
}

pub fn read_joint<R: Read>(reader: R) -> Result<EmpiricalJoint> {
    EmpiricalJoint::from_samples(&read_samples(reader)?)
}

pub fn read_coupling<R: Read>(reader: R) -> Result<Coupling> {
    const NAMES: &[&[&str]] = &[&["q"], &["b"], &["state", "theta", "y"], &["mass", "weight", "w"]];
    let mut rdr = records(reader);
    let mut atoms = Vec::new();
    let mut pos: Option<Vec<Option<usize>>> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if pos.is_none() {
            let (p, header) = layout(&rec, NAMES, line)?;
            if p.iter().any(Option::is_none) {
                return Err(parse_err(line, "need q, b, state and mass columns"));
            }
            pos = Some(p);
            if header {
                continue;
            }
        }
        let p = pos.as_ref().expect("layout set");
        let q = in_unit(field(&rec, p[0], "q", line)?.unwrap(), "q", line)?;
        let b = in_unit(field(&rec, p[1], "b", line)?.unwrap(), "b", line)?;
        let s = state(field(&rec, p[2], "state", line)?.unwrap(), line)?;
        let mass = field(&rec, p[3], "mass", line)?.unwrap();
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(parse_err(line, format!("mass {mass} is not a nonnegative real")));
        }
        atoms.push(CouplingAtom { q, b, state: s, mass });
    }
    Coupling::new(atoms)
}

/// Shortest decimal form that round-trips `x` after rounding to 12
/// significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{}", round_sig(x, 12))
}

pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// Rounds every float inside a JSON value to 12 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or(0.0), 12);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub fn write_coupling<W: Write>(mut w: W, c: &Coupling) -> Result<()> {
    writeln!(w, "q,b,state,mass")?;
    for a in c.atoms() {
        writeln!(w, "{},{},{},{}", a.q, a.b, a.state, a.mass)?;
    }
    Ok(())
}

pub fn write_sequence<W: Write>(mut w: W, qs: &[f64], thetas: &[u8]) -> Result<()> {
    writeln!(w, "q,state")?;
    for (q, t) in qs.iter().zip(thetas) {
        writeln!(w, "{q},{t}")?;
    }
    Ok(())
}

/// `value,weight,posterior` rows of a joint.
pub fn write_joint<W: Write>(mut w: W, joint: &EmpiricalJoint) -> Result<()> {
    writeln!(w, "p,weight,posterior")?;
    for (x, wt, post) in joint.iter() {
        writeln!(w, "{x},{},{}", fmt_num(wt), fmt_num(post))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_with_and_without_header() {
        let a = read_samples("prediction,state\n0.2,1\n0.4,0\n".as_bytes()).unwrap();
        let b = read_samples("0.2,1\n0.4,0\n".as_bytes()).unwrap();
        assert_eq!(a, b);
        let c = read_samples("state,weight,q\n1,2,0.2\n".as_bytes()).unwrap();
        assert_eq!(c, vec![Sample::weighted(0.2, 1, 2.0)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = read_samples("prediction,state\n0.2,1\n1.4,0\n".as_bytes()).unwrap_err();
        assert_eq!(e, Error::Parse { line: 3, message: "prediction 1.4 outside [0,1]".into() });
        let e = read_samples("0.2,1\n0.3,2\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = read_samples("0.2,1\nabc,0\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(matches!(read_samples("".as_bytes()), Err(Error::EmptyDistribution)));
    }

    #[test]
    fn coupling_round_trip() {
        let c = Coupling::new(vec![
            CouplingAtom { q: 0.3, b: 0.5, state: 1, mass: 0.25 },
            CouplingAtom { q: 0.7, b: 0.5, state: 0, mass: 0.75 },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_coupling(&mut buf, &c).unwrap();
        assert_eq!(read_coupling(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.1 + 0.2, 12), 0.3);
        assert_eq!(fmt_num(0.5001), "0.5001");
        let v = round_json(serde_json::json!({"a": [0.30000000000000004, 1], "b": "x"}));
        assert_eq!(v.to_string(), r#"{"a":[0.3,1],"b":"x"}"#);
    }
}
