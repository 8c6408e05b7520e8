//! CPLEX LP text export.

use std::fmt::Write;

use super::model::{MilpProblem, VarKind};
use crate::scalar::Scalar;

fn sanitize(name: &str, fallback: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        out = format!("{fallback}_{out}");
    }
    out
}

fn term<T: Scalar>(buf: &mut String, first: bool, coef: T, name: &str) {
    let neg = coef < T::zero();
    let mag = coef.abs();
    let sign = match (first, neg) {
        (true, false) => "",
        (true, true) => "- ",
        (false, false) => "+ ",
        (false, true) => "- ",
    };
    if mag == T::one() {
        let _ = write!(buf, "{sign}{name}");
    } else {
        let _ = write!(buf, "{sign}{mag} {name}");
    }
}

/// Variable names are made unique by suffixing the index when needed.
fn var_names<T>(p: &MilpProblem<T>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    p.vars
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let base = sanitize(&v.name, "v");
            if seen.insert(base.clone()) {
                base
            } else {
                let alt = format!("{base}_{i}");
                seen.insert(alt.clone());
                alt
            }
        })
        .collect()
}

/// Deterministic LP-format rendering of a problem.
pub fn export_lp_text<T: Scalar>(p: &MilpProblem<T>) -> String {
    let names = var_names(p);
    let mut s = String::new();
    s.push_str("Minimize\n obj: ");
    if p.objective.terms.is_empty() {
        let _ = write!(s, "0 {}", names.first().map(String::as_str).unwrap_or("dummy"));
    }
    for (k, &(v, a)) in p.objective.terms.iter().enumerate() {
        term(&mut s, k == 0, a, &names[v.0]);
        s.push(' ');
    }
    if p.objective.constant != T::zero() {
        let c = p.objective.constant;
        let _ = write!(s, "{} {}", if c < T::zero() { "-" } else { "+" }, c.abs());
    }
    s.push_str("\nSubject To\n");
    let mut cnames = std::collections::HashSet::new();
    for (i, c) in p.constraints.iter().enumerate() {
        let mut name = sanitize(&c.name, "c");
        if !cnames.insert(name.clone()) {
            name = format!("{name}_{i}");
            cnames.insert(name.clone());
        }
        let _ = write!(s, " {name}: ");
        if c.terms.is_empty() {
            let _ = write!(s, "0 {}", names.first().map(String::as_str).unwrap_or("dummy"));
        }
        for (k, &(v, a)) in c.terms.iter().enumerate() {
            term(&mut s, k == 0, a, &names[v.0]);
            s.push(' ');
        }
        let _ = writeln!(s, "{} {}", c.sense.symbol(), c.rhs);
    }
    s.push_str("Bounds\n");
    for (v, name) in p.vars.iter().zip(&names) {
        if v.kind == VarKind::Binary {
            continue;
        }
        let (lo, hi) = (v.lower, v.upper);
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => {
                let _ = writeln!(s, " {name} free");
            }
            (true, false) => {
                let _ = writeln!(s, " {name} >= {lo}");
            }
            (false, true) => {
                let _ = writeln!(s, " -inf <= {name} <= {hi}");
            }
            (true, true) if lo == hi => {
                let _ = writeln!(s, " {name} = {lo}");
            }
            (true, true) => {
                let _ = writeln!(s, " {lo} <= {name} <= {hi}");
            }
        }
    }
    let bins: Vec<&String> = p
        .vars
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !bins.is_empty() {
        s.push_str("Binaries\n");
        for b in bins {
            let _ = writeln!(s, " {b}");
        }
    }
    s.push_str("End\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::{ModelBuilder, Sense};

    #[test]
    fn renders_sections_in_order() {
        let mut b = ModelBuilder::<f64>::new();
        let x = b.continuous("x", 0.0, 4.0);
        let y = b.binary("y");
        let z = b.free("z 1");
        b.add("cap", vec![(x, 1.0), (y, -2.5)], Sense::Le, 3.0);
        b.add("link", vec![(z, 1.0), (x, -1.0)], Sense::Eq, 0.0);
        b.minimize_term(x, -1.0);
        b.minimize_term(y, 2.0);
        let p = b.build().unwrap();
        let text = export_lp_text(&p);
        let expected = "Minimize\n obj: - x + 2 y \nSubject To\n cap: x - 2.5 y <= 3\n link: - x + z_1 = 0\nBounds\n 0 <= x <= 4\n z_1 free\nBinaries\n y\nEnd\n";
        assert_eq!(text, expected);
        assert_eq!(text, export_lp_text(&p));
    }
}
