//! Monotone edit-distance alignment and error aggregation.
//!
//! Alignments are computed between a *reference* (source) and a
//! *hypothesis* (target). `Ins` means the hypothesis carries an extra unit,
//! `Del` means it lacks a reference unit. Costs are unit costs over
//! graphemes; the backtrace prefers match/substitution, then deletion, then
//! insertion.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grapheme::GraphemeString;

/// Label used for the empty side of insertions and deletions.
pub const EPS: &str = "EPS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Match,
    Sub,
    Ins,
    Del,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOp {
    pub kind: OpKind,
    pub source: Option<String>,
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentTrace {
    pub ops: Vec<EditOp>,
    pub cost: usize,
}

impl AlignmentTrace {
    pub fn source_units(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().filter_map(|op| op.source.as_deref())
    }

    pub fn target_units(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().filter_map(|op| op.target.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ErrorCounts {
    pub ins: usize,
    pub del: usize,
    pub sub: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.ins + self.del + self.sub
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.ins += rhs.ins;
        self.del += rhs.del;
        self.sub += rhs.sub;
    }
}

/// Unit-cost Levenshtein distance.
pub fn distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Minimal-cost edit script between two unit sequences.
pub fn align_units<S: AsRef<str>>(source: &[S], target: &[S]) -> AlignmentTrace {
    let (n, m) = (source.len(), target.len());
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j as u32;
    }
    for i in 1..=n {
        dp[i * w] = i as u32;
        for j in 1..=m {
            let same = source[i - 1].as_ref() == target[j - 1].as_ref();
            let diag = dp[(i - 1) * w + j - 1] + u32::from(!same);
            let up = dp[(i - 1) * w + j] + 1;
            let left = dp[i * w + j - 1] + 1;
            dp[i * w + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = source[i - 1].as_ref() == target[j - 1].as_ref();
            if dp[(i - 1) * w + j - 1] + u32::from(!same) == here {
                ops.push(EditOp {
                    kind: if same { OpKind::Match } else { OpKind::Sub },
                    source: Some(source[i - 1].as_ref().to_owned()),
                    target: Some(target[j - 1].as_ref().to_owned()),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            ops.push(EditOp {
                kind: OpKind::Del,
                source: Some(source[i - 1].as_ref().to_owned()),
                target: None,
            });
            i -= 1;
        } else {
            ops.push(EditOp {
                kind: OpKind::Ins,
                source: None,
                target: Some(target[j - 1].as_ref().to_owned()),
            });
            j -= 1;
        }
    }
    ops.reverse();
    AlignmentTrace {
        cost: dp[n * w + m] as usize,
        ops,
    }
}

/// Grapheme-level alignment.
pub fn align(source: &GraphemeString, target: &GraphemeString) -> AlignmentTrace {
    let s: Vec<&str> = source.surfaces().collect();
    let t: Vec<&str> = target.surfaces().collect();
    align_units(&s, &t)
}

/// Codepoint-level alignment, for reports in raw character units.
pub fn align_chars(source: &str, target: &str) -> AlignmentTrace {
    let s: Vec<String> = source.chars().map(String::from).collect();
    let t: Vec<String> = target.chars().map(String::from).collect();
    align_units(&s, &t)
}

pub fn classify_errors(trace: &AlignmentTrace) -> ErrorCounts {
    let mut counts = ErrorCounts::default();
    for op in &trace.ops {
        match op.kind {
            OpKind::Match => {}
            OpKind::Sub => counts.sub += 1,
            OpKind::Ins => counts.ins += 1,
            OpKind::Del => counts.del += 1,
        }
    }
    counts
}

/// What happened to each reference position, plus insertions recorded
/// against the gap that follows a position (gap 0 precedes the first).
struct Projection {
    per_position: Vec<OpKind>,
    insertions_after: Vec<usize>,
}

fn project(trace: &AlignmentTrace, reference_len: usize) -> Projection {
    let mut per_position = Vec::with_capacity(reference_len);
    let mut insertions_after = vec![0; reference_len + 1];
    for op in &trace.ops {
        match op.kind {
            OpKind::Ins => insertions_after[per_position.len()] += 1,
            kind => per_position.push(kind),
        }
    }
    Projection {
        per_position,
        insertions_after,
    }
}

/// Errors a correction system introduced at positions the OCR had right.
///
/// Both the OCR output and the prediction are aligned against the gold
/// line. A gold position counts when the OCR matched it and the prediction
/// substituted or deleted it; a prediction insertion counts when it sits in
/// a gap where the OCR inserted nothing, next to a position the OCR matched.
pub fn system_induced_errors(
    ocr: &GraphemeString,
    prediction: &GraphemeString,
    gold: &GraphemeString,
) -> ErrorCounts {
    let n = gold.len();
    let ocr_p = project(&align(gold, ocr), n);
    let pred_p = project(&align(gold, prediction), n);
    let ocr_ok = |k: usize| ocr_p.per_position.get(k) == Some(&OpKind::Match);

    let mut counts = ErrorCounts::default();
    for k in 0..n {
        if !ocr_ok(k) {
            continue;
        }
        match pred_p.per_position[k] {
            OpKind::Sub => counts.sub += 1,
            OpKind::Del => counts.del += 1,
            _ => {}
        }
    }
    for gap in 0..=n {
        let extra = pred_p.insertions_after[gap].saturating_sub(ocr_p.insertions_after[gap]);
        if extra == 0 {
            continue;
        }
        let anchor_ok = if gap == 0 { n == 0 || ocr_ok(0) } else { ocr_ok(gap - 1) };
        if anchor_ok {
            counts.ins += extra;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    Row,
}

/// Counts of (reference unit, hypothesis unit) events; [`EPS`] marks the
/// empty side of insertions and deletions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<f64>,
    normalization: Normalization,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        let n = labels.len();
        Self {
            labels,
            index,
            counts: vec![0.0; n * n],
            normalization: Normalization::Raw,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    fn idx(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn get(&self, row: &str, col: &str) -> f64 {
        match (self.idx(row), self.idx(col)) {
            (Some(r), Some(c)) => self.counts[r * self.labels.len() + c],
            _ => 0.0,
        }
    }

    pub fn row(&self, label: &str) -> Option<&[f64]> {
        let n = self.labels.len();
        self.idx(label).map(|r| &self.counts[r * n..(r + 1) * n])
    }

    pub fn add(&mut self, row: &str, col: &str, amount: f64) {
        let n = self.labels.len();
        let (r, c) = (
            self.idx(row).expect("row label present"),
            self.idx(col).expect("column label present"),
        );
        self.counts[r * n + c] += amount;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Each nonzero row scaled to sum to one.
    pub fn row_normalized(&self) -> Self {
        let n = self.labels.len();
        let mut out = self.clone();
        for r in 0..n {
            let row = &mut out.counts[r * n..(r + 1) * n];
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|x| *x /= sum);
            }
        }
        out.normalization = Normalization::Row;
        out
    }

    /// CSV with the labels as first row and first column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        let n = self.labels.len();
        for (r, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.counts[r * n..(r + 1) * n].iter().map(|v| fmt_num(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the [`write_csv`](Self::write_csv) format. Rows may list a
    /// subset of the column labels; missing rows are zero.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut records = r.records();
        let header = records.next().ok_or(Error::Empty("confusion csv"))??;
        let cols: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (no, rec) in records.enumerate() {
            let rec = rec?;
            let label = rec.get(0).unwrap_or_default().to_owned();
            if rec.len() != cols.len() + 1 {
                return Err(Error::Parse {
                    line: no + 2,
                    message: format!("expected {} values", cols.len()),
                });
            }
            let values = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: no + 2,
                        message: format!("bad number {v:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((label, values));
        }
        let mut labels = cols.clone();
        for (label, _) in &rows {
            if !labels.contains(label) {
                labels.push(label.clone());
            }
        }
        let mut m = Self::new(labels);
        for (label, values) in rows {
            for (col, v) in cols.iter().zip(values) {
                m.add(&label, col, v);
            }
        }
        Ok(m)
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Aligns every (reference, hypothesis) pair and tallies each op, matches
/// on the diagonal. Labels are sorted with [`EPS`] last.
pub fn confusion_matrix(pairs: &[(GraphemeString, GraphemeString)], normalization: Normalization) -> ConfusionMatrix {
    let traces: Vec<AlignmentTrace> = pairs.iter().map(|(s, t)| align(s, t)).collect();
    confusion_from_traces(&traces, normalization)
}

pub fn confusion_from_traces(traces: &[AlignmentTrace], normalization: Normalization) -> ConfusionMatrix {
    let mut set = BTreeSet::new();
    for op in traces.iter().flat_map(|t| &t.ops) {
        set.extend(op.source.iter().cloned());
        set.extend(op.target.iter().cloned());
    }
    set.remove(EPS);
    let mut labels: Vec<String> = set.into_iter().collect();
    labels.push(EPS.to_owned());
    let mut m = ConfusionMatrix::new(labels);
    for op in traces.iter().flat_map(|t| &t.ops) {
        let row = op.source.as_deref().unwrap_or(EPS);
        let col = op.target.as_deref().unwrap_or(EPS);
        m.add(row, col, 1.0);
    }
    match normalization {
        Normalization::Raw => m,
        Normalization::Row => m.row_normalized(),
    }
}

/// One line of the per-line error report: `line_id\tins\tdel\tsub\tcost`.
pub fn error_report_line(line_id: &str, trace: &AlignmentTrace) -> String {
    let c = classify_errors(trace);
    format!("{line_id}\t{}\t{}\t{}\t{}", c.ins, c.del, c.sub, trace.cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grapheme::{segment, Alphabet};
    use proptest::prelude::*;

    fn g(s: &str) -> GraphemeString {
        segment(s, &Alphabet::iast())
    }

    #[test]
    fn diacritic_substitutions() {
        let t = align(&g("krsna"), &g("kṛṣṇa"));
        assert_eq!(t.cost, 3);
        let subs: Vec<_> = t
            .ops
            .iter()
            .filter(|o| o.kind == OpKind::Sub)
            .map(|o| (o.source.as_deref().unwrap(), o.target.as_deref().unwrap()))
            .collect();
        assert_eq!(subs, [("r", "ṛ"), ("s", "ṣ"), ("n", "ṇ")]);
        assert_eq!(classify_errors(&t), ErrorCounts { ins: 0, del: 0, sub: 3 });
    }

    #[test]
    fn identity_and_empty() {
        let t = align(&g("rāma"), &g("rāma"));
        assert_eq!(t.cost, 0);
        assert!(t.ops.iter().all(|o| o.kind == OpKind::Match));
        let t = align(&g(""), &g("abc"));
        assert_eq!(t.cost, 3);
        assert_eq!(classify_errors(&t), ErrorCounts { ins: 3, del: 0, sub: 0 });
        assert_eq!(classify_errors(&AlignmentTrace::default()), ErrorCounts::default());
    }

    #[test]
    fn tie_break_prefers_substitution_then_deletion() {
        // "ab" vs "b": deleting `a` is the only optimum.
        let t = align_units(&["a", "b"], &["b"]);
        assert_eq!(t.ops[0].kind, OpKind::Del);
        // "ab" vs "ba": cost 2, resolved as two substitutions.
        let t = align_units(&["a", "b"], &["b", "a"]);
        assert_eq!(t.cost, 2);
        assert!(t.ops.iter().all(|o| o.kind == OpKind::Sub));
    }

    #[test]
    fn system_errors_three_way() {
        assert_eq!(
            system_induced_errors(&g("abc"), &g("adc"), &g("abc")),
            ErrorCounts { ins: 0, del: 0, sub: 1 }
        );
        assert_eq!(system_induced_errors(&g("abx"), &g("abc"), &g("abc")), ErrorCounts::default());
        assert_eq!(system_induced_errors(&g("abx"), &g("abx"), &g("abc")), ErrorCounts::default());
        assert_eq!(
            system_induced_errors(&g("abc"), &g("abdc"), &g("abc")),
            ErrorCounts { ins: 1, del: 0, sub: 0 }
        );
        assert_eq!(
            system_induced_errors(&g("abc"), &g("ac"), &g("abc")),
            ErrorCounts { ins: 0, del: 1, sub: 0 }
        );
    }

    #[test]
    fn confusion_single_match() {
        let m = confusion_matrix(&[(g("a"), g("a"))], Normalization::Raw);
        assert_eq!(m.get("a", "a"), 1.0);
        assert_eq!(m.total(), 1.0);
    }

    #[test]
    fn confusion_gold_rows_ocr_columns() {
        let m = confusion_matrix(&[(g("ñā"), g("ia")), (g("ña"), g("ia"))], Normalization::Row);
        assert_eq!(m.get("ñ", "i"), 1.0);
        assert_eq!(m.get("ā", "a"), 1.0);
        assert_eq!(m.get("a", "a"), 1.0);
        assert_eq!(m.normalization(), Normalization::Row);
    }

    #[test]
    fn csv_round_trip() {
        let m = confusion_matrix(&[(g("abc"), g("axcd")), (g("b,"), g("b"))], Normalization::Raw);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",EPS"));
        let back = ConfusionMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn report_line_format() {
        let t = align(&g("abc"), &g("xbcd"));
        assert_eq!(error_report_line("7", &t), "7\t1\t0\t1\t2");
    }

    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a, b) {
            ([], b) => b.len(),
            (a, []) => a.len(),
            ([x, ar @ ..], [y, br @ ..]) => {
                let sub = brute(ar, br) + usize::from(x != y);
                sub.min(brute(ar, b) + 1).min(brute(a, br) + 1)
            }
        }
    }

    proptest! {
        #[test]
        fn trace_is_consistent(a in "[abc]{0,9}", b in "[abc]{0,9}") {
            let (ga, gb) = (g(&a), g(&b));
            let t = align(&ga, &gb);
            prop_assert_eq!(t.cost, brute(a.as_bytes(), b.as_bytes()));
            prop_assert_eq!(t.cost, distance(a.as_bytes(), b.as_bytes()));
            let op_cost = t.ops.iter().filter(|o| o.kind != OpKind::Match).count();
            prop_assert_eq!(op_cost, t.cost);
            prop_assert_eq!(t.source_units().collect::<String>(), a.clone());
            prop_assert_eq!(t.target_units().collect::<String>(), b.clone());
            let c = classify_errors(&t);
            prop_assert_eq!(gb.len() as isize - ga.len() as isize, c.ins as isize - c.del as isize);
        }

        #[test]
        fn confusion_total_equals_op_count(pairs in prop::collection::vec(("[abck]{0,8}", "[abck]{0,8}"), 1..20)) {
            let gp: Vec<_> = pairs.iter().map(|(a, b)| (g(a), g(b))).collect();
            let ops: usize = gp.iter().map(|(a, b)| align(a, b).ops.len()).sum();
            let m = confusion_matrix(&gp, Normalization::Raw);
            prop_assert_eq!(m.total() as usize, ops);
            let r = m.row_normalized();
            for l in r.labels() {
                let s: f64 = r.row(l).unwrap().iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
            }
        }
    }
}
