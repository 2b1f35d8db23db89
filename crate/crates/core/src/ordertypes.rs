//! Countable linear order types as symbolic terms, a sound (incomplete)
//! normalizer, and growth-pattern signatures of nested chain families.
//!
//! Term syntax: `fin:k`, `w`, `w*`, `z`, `e`, `+` for sums, `.` for products
//! (binding tighter than `+`), parentheses for grouping.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::nesting::{first_occurrence_order, NestedFamily, StabilizedOrder};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderTypeTerm {
    Fin(u64),
    Omega,
    OmegaStar,
    Zeta,
    Eta,
    Sum(Vec<OrderTypeTerm>),
    Prod(Box<OrderTypeTerm>, Box<OrderTypeTerm>),
}

use OrderTypeTerm::*;

impl OrderTypeTerm {
    /// Flattening sum constructor.
    pub fn sum(parts: Vec<OrderTypeTerm>) -> Self {
        let mut out = Vec::with_capacity(parts.len());
        for p in parts {
            match p {
                Sum(inner) => out.extend(inner),
                t => out.push(t),
            }
        }
        Sum(out)
    }

    pub fn prod(a: OrderTypeTerm, b: OrderTypeTerm) -> Self {
        Prod(Box::new(a), Box::new(b))
    }

    /// `ω + j`.
    pub fn omega_plus(j: u64) -> Self {
        if j == 0 {
            Omega
        } else {
            Sum(vec![Omega, Fin(j)])
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Sum(v) => 1 + v.iter().map(|t| t.depth()).max().unwrap_or(0),
            Prod(a, b) => 1 + a.depth().max(b.depth()),
            _ => 1,
        }
    }

    /// Display form with `ω* + ω` contracted back to `z`.
    pub fn pretty(&self) -> String {
        contract_zeta(self).to_string()
    }
}

fn contract_zeta(t: &OrderTypeTerm) -> OrderTypeTerm {
    match t {
        Sum(v) => {
            let v: Vec<OrderTypeTerm> = v.iter().map(contract_zeta).collect();
            let mut out: Vec<OrderTypeTerm> = Vec::with_capacity(v.len());
            for x in v {
                if x == Omega && out.last() == Some(&OmegaStar) {
                    out.pop();
                    out.push(Zeta);
                } else {
                    out.push(x);
                }
            }
            if out.len() == 1 {
                out.pop().expect("one element")
            } else {
                Sum(out)
            }
        }
        Prod(a, b) => Prod(Box::new(contract_zeta(a)), Box::new(contract_zeta(b))),
        t => t.clone(),
    }
}

fn fmt_atom(t: &OrderTypeTerm, f: &mut fmt::Formatter<'_>, in_prod: bool) -> fmt::Result {
    match t {
        Sum(v) if in_prod && v.len() > 1 => write!(f, "({t})"),
        Prod(..) if in_prod => write!(f, "({t})"),
        _ => write!(f, "{t}"),
    }
}

impl fmt::Display for OrderTypeTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fin(k) => write!(f, "fin:{k}"),
            Omega => f.write_str("w"),
            OmegaStar => f.write_str("w*"),
            Zeta => f.write_str("z"),
            Eta => f.write_str("e"),
            Sum(v) if v.is_empty() => f.write_str("fin:0"),
            Sum(v) => {
                for (i, t) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    // a sum nested in a sum only arises from unflattened input
                    fmt_atom(t, f, matches!(t, Sum(_)))?;
                }
                Ok(())
            }
            Prod(a, b) => {
                fmt_atom(a, f, !matches!(**a, Prod(..)))?;
                f.write_str(".")?;
                fmt_atom(b, f, true)
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected end of input")]
    End,
    #[error("unexpected {0:?} at byte {1}")]
    Unexpected(char, usize),
    #[error("bad finite size at byte {0}")]
    BadFin(usize),
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn skip(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip();
        self.s.get(self.i).copied()
    }

    fn sum(&mut self) -> Result<OrderTypeTerm, ParseError> {
        let mut parts = vec![self.product()?];
        while self.peek() == Some(b'+') {
            self.i += 1;
            parts.push(self.product()?);
        }
        Ok(if parts.len() == 1 { parts.pop().expect("one") } else { OrderTypeTerm::sum(parts) })
    }

    fn product(&mut self) -> Result<OrderTypeTerm, ParseError> {
        let mut t = self.atom()?;
        while self.peek() == Some(b'.') {
            self.i += 1;
            t = OrderTypeTerm::prod(t, self.atom()?);
        }
        Ok(t)
    }

    fn atom(&mut self) -> Result<OrderTypeTerm, ParseError> {
        let c = self.peek().ok_or(ParseError::End)?;
        let at = self.i;
        match c {
            b'(' => {
                self.i += 1;
                let t = self.sum()?;
                match self.peek() {
                    Some(b')') => {
                        self.i += 1;
                        Ok(t)
                    }
                    Some(c) => Err(ParseError::Unexpected(c as char, self.i)),
                    None => Err(ParseError::End),
                }
            }
            b'w' => {
                self.i += 1;
                if self.s.get(self.i) == Some(&b'*') {
                    self.i += 1;
                    Ok(OmegaStar)
                } else {
                    Ok(Omega)
                }
            }
            b'z' => {
                self.i += 1;
                Ok(Zeta)
            }
            b'e' => {
                self.i += 1;
                Ok(Eta)
            }
            b'f' if self.s[self.i..].starts_with(b"fin:") => {
                self.i += 4;
                let start = self.i;
                while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                    self.i += 1;
                }
                std::str::from_utf8(&self.s[start..self.i])
                    .ok()
                    .and_then(|d| d.parse().ok())
                    .map(Fin)
                    .ok_or(ParseError::BadFin(at))
            }
            c => Err(ParseError::Unexpected(c as char, at)),
        }
    }
}

impl std::str::FromStr for OrderTypeTerm {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        let mut p = Parser { s: s.as_bytes(), i: 0 };
        let t = p.sum()?;
        match p.peek() {
            None => Ok(t),
            Some(c) => Err(ParseError::Unexpected(c as char, p.i)),
        }
    }
}

fn rewrite_sum(items: Vec<OrderTypeTerm>) -> Vec<OrderTypeTerm> {
    let mut v: Vec<OrderTypeTerm> = Vec::with_capacity(items.len());
    for t in items {
        match t {
            Sum(inner) => v.extend(inner),
            Zeta => {
                v.push(OmegaStar);
                v.push(Omega);
            }
            Fin(0) => {}
            t => v.push(t),
        }
    }
    loop {
        let mut changed = false;
        let mut out: Vec<OrderTypeTerm> = Vec::with_capacity(v.len());
        let mut i = 0;
        while i < v.len() {
            let t = &v[i];
            let prev = out.last();
            match (prev, t) {
                (Some(Fin(a)), Fin(b)) => {
                    let s = a + b;
                    out.pop();
                    out.push(Fin(s));
                    changed = true;
                }
                (Some(Fin(_)), Omega) => {
                    out.pop();
                    out.push(Omega);
                    changed = true;
                }
                (Some(OmegaStar), Fin(_)) => changed = true,
                (Some(Eta), Eta) => changed = true,
                (Some(Eta), Fin(1)) if v.get(i + 1) == Some(&Eta) => {
                    i += 1;
                    changed = true;
                }
                _ => out.push(t.clone()),
            }
            i += 1;
        }
        v = out;
        if !changed {
            return v;
        }
    }
}

/// Apply the rewrite rules to a fixed point.
///
/// Rules: flatten sums, drop empty summands, expand `ζ` to `ω* + ω`, merge
/// adjacent finite summands, `n + ω = ω`, `ω* + n = ω*`, `η + 1 + η = η`,
/// `η + η = η`, and `t · n` as an `n`-fold sum. Nothing else.
pub fn normalize(t: &OrderTypeTerm) -> OrderTypeTerm {
    match t {
        Fin(_) | Omega | OmegaStar | Eta => t.clone(),
        Zeta => Sum(vec![OmegaStar, Omega]),
        Sum(v) => {
            let items: Vec<OrderTypeTerm> = v.iter().map(normalize).collect();
            let out = rewrite_sum(items);
            match out.len() {
                0 => Fin(0),
                1 => out.into_iter().next().expect("one"),
                _ => Sum(out),
            }
        }
        Prod(a, b) => {
            let a = normalize(a);
            let b = normalize(b);
            match b {
                Fin(k) => {
                    let copies = vec![a; k as usize];
                    normalize(&Sum(copies))
                }
                b => Prod(Box::new(a), Box::new(b)),
            }
        }
    }
}

/// Syntactic equality after normalization: sound, not complete.
pub fn equal_normalized(a: &OrderTypeTerm, b: &OrderTypeTerm) -> bool {
    normalize(a) == normalize(b)
}

/// One element of a finite truncation: whether it has an immediate
/// predecessor / successor in the full order, and whether the truncation
/// skips elements between it and the next truncation element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TruncElem {
    pub pred: bool,
    pub succ: bool,
    pub gap_after: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Truncation {
    pub elems: Vec<TruncElem>,
    pub has_min: bool,
    pub has_max: bool,
    /// Elements of the full order precede the first truncation element.
    pub head_gap: bool,
    /// Elements of the full order follow the last truncation element.
    pub tail_gap: bool,
}

/// Finite truncation of the order denoted by `t`, at depth `n`, or `None`
/// when it would exceed `cap` elements. Infinite atoms keep `n` elements
/// (`2^n - 1` for `η`); truncations grow with `n` and exhaust the order.
pub fn truncation(t: &OrderTypeTerm, n: usize, cap: usize) -> Option<Truncation> {
    truncation_at(t, n, n, cap)
}

/// As [`truncation`], with `n` elements per linear atom and `2^m - 1` per `η`.
pub fn truncation_at(t: &OrderTypeTerm, n: usize, m: usize, cap: usize) -> Option<Truncation> {
    let e = |pred, succ, gap_after| TruncElem { pred, succ, gap_after };
    let tr = match t {
        Fin(k) => {
            let k = *k as usize;
            if k > cap {
                return None;
            }
            let elems = (0..k).map(|i| e(i > 0, i + 1 < k, false)).collect();
            Truncation { elems, has_min: k > 0, has_max: k > 0, head_gap: false, tail_gap: false }
        }
        Omega => Truncation {
            elems: (0..n).map(|i| e(i > 0, true, false)).collect(),
            has_min: true,
            has_max: false,
            head_gap: false,
            tail_gap: true,
        },
        OmegaStar => Truncation {
            elems: (0..n).map(|i| e(true, i + 1 < n, false)).collect(),
            has_min: false,
            has_max: true,
            head_gap: true,
            tail_gap: false,
        },
        Zeta => return truncation_at(&Sum(vec![OmegaStar, Omega]), n, m, cap),
        Eta => {
            let k = (1usize << m.min(20)) - 1;
            if k > cap {
                return None;
            }
            Truncation { elems: vec![e(false, false, true); k], has_min: false, has_max: false, head_gap: true, tail_gap: true }
        }
        Sum(v) => {
            let parts: Vec<Truncation> = v.iter().map(|s| truncation_at(s, n, m, cap)).collect::<Option<_>>()?;
            concat(parts, cap)?
        }
        Prod(a, b) => {
            // `b` copies of `a`
            let ta = truncation_at(a, n, m, cap)?;
            let tb = truncation_at(b, n, m, cap)?;
            if ta.elems.len() * tb.elems.len() > cap {
                return None;
            }
            let len = ta.elems.len();
            let mut elems = Vec::with_capacity(len * tb.elems.len());
            for be in &tb.elems {
                for (j, x) in ta.elems.iter().enumerate() {
                    let mut x = *x;
                    // a copy's extremes see across to the neighbouring copies
                    if j == 0 && ta.has_min {
                        x.pred = be.pred && ta.has_max;
                    }
                    if j + 1 == len {
                        if ta.has_max {
                            x.succ = be.succ && ta.has_min;
                        }
                        x.gap_after = ta.tail_gap || ta.head_gap || be.gap_after;
                    }
                    elems.push(x);
                }
            }
            let nonempty = len > 0 && !tb.elems.is_empty();
            Truncation {
                elems,
                has_min: ta.has_min && tb.has_min,
                has_max: ta.has_max && tb.has_max,
                head_gap: nonempty && (ta.head_gap || tb.head_gap),
                tail_gap: nonempty && (ta.tail_gap || tb.tail_gap),
            }
        }
    };
    (tr.elems.len() <= cap).then_some(tr)
}

fn concat(parts: Vec<Truncation>, cap: usize) -> Option<Truncation> {
    let parts: Vec<Truncation> = parts.into_iter().filter(|p| !p.elems.is_empty()).collect();
    let mut elems = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        let len = p.elems.len();
        for (j, x) in p.elems.iter().enumerate() {
            let mut x = *x;
            if j == 0 && p.has_min {
                x.pred = i > 0 && parts[i - 1].has_max;
            }
            if j + 1 == len {
                if p.has_max {
                    x.succ = i + 1 < parts.len() && parts[i + 1].has_min;
                }
                x.gap_after = p.tail_gap || parts.get(i + 1).is_some_and(|q| q.head_gap);
            }
            elems.push(x);
        }
        if elems.len() > cap {
            return None;
        }
    }
    Some(Truncation {
        has_min: parts.first().map(|p| p.has_min).unwrap_or(false),
        has_max: parts.last().map(|p| p.has_max).unwrap_or(false),
        head_gap: parts.first().is_some_and(|p| p.head_gap),
        tail_gap: parts.last().is_some_and(|p| p.tail_gap),
        elems,
    })
}

/// Whether `a` embeds into `b` as a labelled suborder: every gapless run of
/// `a` lands, in order, on a gapless stretch of `b` with the same neighbour
/// labels. Earliest placement is optimal, so one greedy pass decides it.
pub fn truncation_embeds(a: &Truncation, b: &Truncation) -> bool {
    let lab = |x: &TruncElem| (x.pred, x.succ);
    let mut runs: Vec<&[TruncElem]> = Vec::new();
    let mut start = 0;
    for (i, x) in a.elems.iter().enumerate() {
        if x.gap_after || i + 1 == a.elems.len() {
            runs.push(&a.elems[start..=i]);
            start = i + 1;
        }
    }
    let mut pos = 0;
    for r in runs {
        let fits = |s: usize| {
            r.iter().zip(&b.elems[s..s + r.len()]).all(|(x, y)| lab(x) == lab(y))
                && b.elems[s..s + r.len() - 1].iter().all(|y| !y.gap_after)
        };
        match (pos..=b.elems.len().saturating_sub(r.len())).find(|&s| s + r.len() <= b.elems.len() && fits(s)) {
            Some(s) => pos = s + r.len(),
            None => return false,
        }
    }
    true
}

/// Targets may be this many times larger than the sampled truncations, so a
/// sample's depth does not outrun what the other side can show.
pub const TARGET_FACTOR: usize = 64;

/// Targets for a depth-`n` sample, indexed by `η` depth `n + j` for `j <= 8`:
/// linear atoms as deep as `cap` allows (at least `n`), chosen separately
/// for each summand of a sum.
fn targets(t: &OrderTypeTerm, n: usize, cap: usize) -> Vec<Truncation> {
    if let Sum(v) = t {
        let per: Vec<Vec<Truncation>> = v.iter().map(|p| targets(p, n, cap)).collect();
        let Some(k) = per.iter().map(|p| p.len()).min() else { return vec![] };
        return (0..k).filter_map(|j| concat(per.iter().map(|p| p[j].clone()).collect(), usize::MAX)).collect();
    }
    let mut out = Vec::new();
    for m in n..=n + 8 {
        if truncation_at(t, n, m, cap).is_none() {
            break;
        }
        // fitting is monotone in the linear depth
        let (mut lo, mut hi) = (n, 64);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if truncation_at(t, mid, m, cap).is_some() {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        out.extend(truncation_at(t, lo, m, cap));
    }
    out
}

/// Whether the truncation model contradicts `a ≅ b`: some truncation of
/// depth 2 to 5 with at most `cap` elements embeds into none of the deeper
/// truncations of the other side (within `TARGET_FACTOR * cap` elements), or
/// the two sides disagree on extremes.
pub fn truncations_disagree(a: &OrderTypeTerm, b: &OrderTypeTerm, cap: usize) -> bool {
    let big = cap.saturating_mul(TARGET_FACTOR);
    let one_way = |s: &OrderTypeTerm, t: &OrderTypeTerm| {
        for n in 2..=5 {
            let Some(src) = truncation(s, n, cap) else { break };
            let tgts = targets(t, n, big);
            if tgts.is_empty() {
                break;
            }
            let ok = |tgt: &Truncation| {
                src.has_min == tgt.has_min && src.has_max == tgt.has_max && truncation_embeds(&src, tgt)
            };
            if !tgts.iter().any(ok) {
                return true;
            }
        }
        false
    };
    one_way(a, b) || one_way(b, a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Growth {
    None,
    UnboundedPrefix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Densification {
    None,
    Everywhere,
    Partial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Confidence {
    OracleGrade,
    Heuristic,
}

/// Where new points landed between two consecutive levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insertions {
    pub left: usize,
    pub right: usize,
    pub interior: usize,
    /// Gaps of the coarser level (between consecutive points, ends included).
    pub gaps: usize,
    /// Gaps that received at least one point.
    pub gaps_filled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureReport {
    pub left_growth: Growth,
    pub right_growth: Growth,
    pub interior_densification: Densification,
    pub decided_size_trend: Vec<usize>,
    pub insertions: Vec<Insertions>,
    pub verdict: Vec<(OrderTypeTerm, Confidence)>,
    pub inconclusive: bool,
    pub notes: Vec<String>,
}

/// Minimum number of levels for a signature.
pub const MIN_SIGNATURE_LEVELS: usize = 4;

/// Classify where each level's new interior points appear relative to the
/// previous level's order.
pub fn level_insertions(nf: &NestedFamily) -> Vec<Insertions> {
    let mut out = Vec::new();
    for w in nf.chains.windows(2) {
        let old = first_occurrence_order(&w[0]).points;
        let old_set: HashSet<Point> = old.iter().copied().collect();
        let new = first_occurrence_order(&w[1]).points;
        let mut ins = Insertions { gaps: old.len() + 1, ..Default::default() };
        let mut filled = vec![false; old.len() + 1];
        // gap g lies between old[g-1] and old[g]; old points appear in `new` in order for nested acyclic input
        let rank: std::collections::HashMap<Point, usize> = old.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut gap = 0usize;
        for p in &new {
            if old_set.contains(p) {
                gap = rank[p] + 1;
                continue;
            }
            filled[gap.min(old.len())] = true;
            if old.is_empty() {
                ins.interior += 1;
            } else if gap == 0 {
                ins.left += 1;
            } else if gap >= old.len() {
                ins.right += 1;
            } else {
                ins.interior += 1;
            }
        }
        ins.gaps_filled = filled.iter().filter(|f| **f).count();
        out.push(ins);
    }
    out
}

pub fn detect_signature(nf: &NestedFamily, so: &StabilizedOrder) -> SignatureReport {
    let sizes: Vec<usize> = nf.chains.iter().map(|c| first_occurrence_order(c).points.len()).collect();
    let insertions = level_insertions(nf);
    let mut notes = Vec::new();
    if !so.fully_decided() {
        notes.push(format!("{} unstable pairs in the window", so.unstable.len()));
    }
    let mut report = SignatureReport {
        left_growth: Growth::None,
        right_growth: Growth::None,
        interior_densification: Densification::None,
        decided_size_trend: sizes.clone(),
        insertions: insertions.clone(),
        verdict: vec![],
        inconclusive: false,
        notes,
    };
    if nf.len() < MIN_SIGNATURE_LEVELS {
        report.inconclusive = true;
        report.notes.push(format!("only {} levels", nf.len()));
        return report;
    }
    // judge growth on the later half, where the early coarse levels no longer dominate
    let tail = &insertions[insertions.len() / 2..];
    let half = tail.len().div_ceil(2);
    let count = |f: &dyn Fn(&Insertions) -> bool| tail.iter().filter(|i| f(i)).count();
    let stable = sizes[sizes.len() - 3..].windows(2).all(|w| w[0] == w[1]) && tail.last().map(|i| i.left + i.right + i.interior == 0).unwrap_or(true);
    if count(&|i| i.left > 0) >= half {
        report.left_growth = Growth::UnboundedPrefix;
    }
    if count(&|i| i.right > 0) >= half {
        report.right_growth = Growth::UnboundedPrefix;
    }
    let interior = count(&|i| i.interior > 0);
    if interior >= half {
        // every gap of the coarser level filled at each late transition
        let everywhere = tail.iter().all(|i| i.gaps_filled == i.gaps);
        report.interior_densification = if everywhere { Densification::Everywhere } else { Densification::Partial };
    } else if interior > 0 {
        report.interior_densification = Densification::Partial;
    }
    let h = Confidence::Heuristic;
    let (l, r) = (report.left_growth == Growth::UnboundedPrefix, report.right_growth == Growth::UnboundedPrefix);
    report.verdict = if stable {
        vec![(Fin(*sizes.last().expect("levels") as u64), h)]
    } else {
        match (l, r, report.interior_densification) {
            (_, _, Densification::Everywhere) => vec![(Eta, h)],
            (false, true, Densification::None) => vec![(Omega, h)],
            (true, false, Densification::None) => vec![(OmegaStar, h)],
            (true, true, Densification::None) => vec![(Zeta, h)],
            (_, true, Densification::Partial) => vec![(OrderTypeTerm::prod(Zeta, Omega), h)],
            _ => {
                report.notes.push("growth pattern matches no named type".into());
                vec![]
            }
        }
    };
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epsgraph::Chain;
    use proptest::prelude::*;

    fn t(s: &str) -> OrderTypeTerm {
        s.parse().unwrap()
    }

    #[test]
    fn named_identities() {
        assert!(equal_normalized(&t("fin:3+w"), &t("w")));
        assert!(equal_normalized(&t("e+fin:1+e"), &t("e")));
        assert!(equal_normalized(&t("e+e"), &t("e")));
        assert!(equal_normalized(&t("w*+w"), &t("z")));
        assert!(equal_normalized(&t("w*+fin:4"), &t("w*")));
        assert!(equal_normalized(&t("w"), &t("fin:5+w")));
        assert!(!equal_normalized(&t("w"), &t("w*")));
        assert!(!equal_normalized(&t("z.w+z"), &t("z.w+w*")));
        assert!(!equal_normalized(&t("w+fin:1"), &t("w")));
        assert_eq!(normalize(&t("w.fin:2")), t("w+w"));
        assert_eq!(normalize(&t("(fin:2+w).fin:0")), Fin(0));
    }

    #[test]
    fn parse_and_print() {
        for s in ["fin:0", "w", "w*", "z", "e", "z.w+z", "(w+fin:1).w", "w.(w+e)", "w+fin:2"] {
            assert_eq!(t(s).pretty(), s, "{s}");
        }
        assert_eq!(t("z . w + z"), t("z.w+z"));
        assert!("w+".parse::<OrderTypeTerm>().is_err());
        assert!("fin:x".parse::<OrderTypeTerm>().is_err());
        assert!("(w".parse::<OrderTypeTerm>().is_err());
        assert_eq!(OrderTypeTerm::omega_plus(2).pretty(), "w+fin:2");
    }

    #[test]
    fn truncation_model_separates_basic_types() {
        let all = ["w", "w*", "z", "e", "fin:3", "w+fin:1", "fin:1+w*", "w+w", "e+fin:1"];
        for a in all {
            for b in all {
                assert_eq!(truncations_disagree(&t(a), &t(b), 200), a != b, "{a} vs {b}");
            }
        }
        assert!(!truncations_disagree(&t("fin:2+w"), &t("w"), 200));
        assert!(!truncations_disagree(&t("e+fin:1+e"), &t("e"), 200));
        // merge order, sample depth and summand depth must not matter
        for (a, b) in [
            ("(fin:4+e).(w*+fin:1)", "(fin:4+e).w*"),
            ("fin:1+w+(fin:1+w.z).e", "w+(fin:1+w.z).e"),
            ("e.fin:9", "e"),
            ("w*+fin:6+w.w.(z.w)", "w*+w.w.(z.w)"),
        ] {
            assert!(!truncations_disagree(&t(a), &t(b), 200), "{a} vs {b}");
        }
        assert!(truncations_disagree(&t("w.fin:3"), &t("w+w"), 200));
    }

    fn fam(levels: &[&[f64]]) -> NestedFamily {
        let chains = levels
            .iter()
            .map(|l| {
                let mut pts = vec![Point::line(0.0)];
                pts.extend(l.iter().map(|&v| Point::line(v)));
                pts.push(Point::line(1.0));
                Chain::new(pts, 1.0)
            })
            .collect();
        NestedFamily::new(chains).unwrap()
    }

    #[test]
    fn signatures() {
        let so = |nf: &NestedFamily| crate::nesting::stabilized_order(nf, 3);
        let row: &[f64] = &[0.2, 0.4, 0.6];
        let c = fam(&[row; 5]);
        assert_eq!(detect_signature(&c, &so(&c)).verdict, vec![(Fin(3), Confidence::Heuristic)]);
        let mut levels: Vec<Vec<f64>> = Vec::new();
        for n in 1..8 {
            levels.push((1..=n).map(|k| 1.0 - 0.5f64.powi(k)).collect());
        }
        let refs: Vec<&[f64]> = levels.iter().map(|v| v.as_slice()).collect();
        let w = fam(&refs);
        assert_eq!(detect_signature(&w, &so(&w)).verdict[0].0, Omega);
        let levels: Vec<Vec<f64>> = levels.iter().map(|v| v.iter().rev().map(|x| 1.0 - x).collect()).collect();
        let refs: Vec<&[f64]> = levels.iter().map(|v| v.as_slice()).collect();
        let ws = fam(&refs);
        assert_eq!(detect_signature(&ws, &so(&ws)).verdict[0].0, OmegaStar);
        let mut dy: Vec<Vec<f64>> = Vec::new();
        for n in 1..7 {
            let m = 1usize << n;
            dy.push((1..m).map(|i| i as f64 / m as f64).collect());
        }
        let refs: Vec<&[f64]> = dy.iter().map(|v| v.as_slice()).collect();
        let e = fam(&refs);
        let r = detect_signature(&e, &so(&e));
        assert_eq!(r.interior_densification, Densification::Everywhere);
        assert_eq!(r.verdict[0].0, Eta);
        let short = fam(&[&[0.5], &[0.5, 0.7]]);
        assert!(detect_signature(&short, &so(&short)).inconclusive);
    }

    pub(crate) fn arb_term() -> impl Strategy<Value = OrderTypeTerm> {
        let leaf = prop_oneof![(0u64..4).prop_map(Fin), Just(Omega), Just(OmegaStar), Just(Zeta), Just(Eta)];
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(Sum),
                (inner.clone(), inner).prop_map(|(a, b)| OrderTypeTerm::prod(a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(x in arb_term()) {
            let n = normalize(&x);
            prop_assert_eq!(normalize(&n), n);
        }

        #[test]
        fn text_round_trip(x in arb_term()) {
            let n = normalize(&x);
            let back: OrderTypeTerm = n.to_string().parse().unwrap();
            prop_assert_eq!(normalize(&back), n);
        }

        #[test]
        fn equal_terms_have_equal_truncations(x in arb_term()) {
            prop_assert!(!truncations_disagree(&x, &normalize(&x), 200));
        }
    }
}
