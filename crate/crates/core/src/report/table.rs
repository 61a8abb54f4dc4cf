use std::fmt::Write as _;

use super::ReportError;

/// Percent with two decimals, stored as an integer count of hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Hundredths(pub u64);

impl Hundredths {
    /// `100 * part / whole` rounded half-up to two decimals; 0 when `whole`
    /// is 0.
    pub fn percent(part: u64, whole: u64) -> Hundredths {
        if whole == 0 {
            return Hundredths(0);
        }
        let (p, w) = (u128::from(part), u128::from(whole));
        Hundredths(((p * 20_000 + w) / (2 * w)) as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl std::fmt::Display for Hundredths {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowInput {
    pub label: String,
    pub count: u64,
    pub bytes: u64,
    /// Secondary per-packet count, for tables whose count is not packets.
    pub packets: Option<u64>,
}

impl RowInput {
    pub fn new(label: impl Into<String>, count: u64, bytes: u64) -> RowInput {
        RowInput { label: label.into(), count, bytes, packets: None }
    }

    pub fn with_packets(mut self, packets: u64) -> RowInput {
        self.packets = Some(packets);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PercentRow {
    pub label: String,
    pub count: u64,
    pub bytes: u64,
    pub packets: Option<u64>,
    pub percent_by_count: Hundredths,
    pub percent_by_bytes: Hundredths,
    pub percent_by_packets: Option<Hundredths>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PercentTable {
    pub title: String,
    /// What `count` counts ("packets", "flows", ...).
    pub unit: String,
    pub rows: Vec<PercentRow>,
}

/// Builds a table with every percent column rounded half-up independently;
/// rounded columns may therefore miss 100.00 by up to 0.005 per row.
pub fn percent_table(title: &str, unit: &str, rows: Vec<RowInput>) -> Result<PercentTable, ReportError> {
    let total: u64 = rows.iter().map(|r| r.count).sum();
    if total == 0 {
        return Err(ReportError::EmptyUniverse(title.to_string()));
    }
    let total_bytes: u64 = rows.iter().map(|r| r.bytes).sum();
    let total_packets: u64 = rows.iter().filter_map(|r| r.packets).sum();
    let rows = rows
        .into_iter()
        .map(|r| PercentRow {
            percent_by_count: Hundredths::percent(r.count, total),
            percent_by_bytes: Hundredths::percent(r.bytes, total_bytes),
            percent_by_packets: r.packets.map(|p| Hundredths::percent(p, total_packets)),
            label: r.label,
            count: r.count,
            bytes: r.bytes,
            packets: r.packets,
        })
        .collect();
    Ok(PercentTable { title: title.to_string(), unit: unit.to_string(), rows })
}

impl PercentTable {
    pub fn total_count(&self) -> u64 {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.bytes).sum()
    }

    pub fn row(&self, label: &str) -> Option<&PercentRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn percents(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.percent_by_count.as_f64()).collect()
    }

    fn has_packets(&self) -> bool {
        self.rows.iter().any(|r| r.packets.is_some())
    }

    /// Folds rows selected by `foldable` whose count share is below
    /// `threshold_percent` into one `Other` row, placed before any row
    /// labelled `NonIdentified`. Totals are unchanged.
    pub fn fold_other(&self, threshold_percent: f64, foldable: impl Fn(&str) -> bool) -> PercentTable {
        let total = self.total_count();
        let mut kept = Vec::new();
        let mut other: Option<RowInput> = None;
        for r in &self.rows {
            let share = 100.0 * r.count as f64 / total as f64;
            if foldable(&r.label) && share < threshold_percent {
                let o = other.get_or_insert_with(|| RowInput {
                    label: "Other".into(),
                    count: 0,
                    bytes: 0,
                    packets: r.packets.map(|_| 0),
                });
                o.count += r.count;
                o.bytes += r.bytes;
                if let (Some(p), Some(op)) = (r.packets, o.packets.as_mut()) {
                    *op += p;
                }
            } else {
                kept.push(RowInput { label: r.label.clone(), count: r.count, bytes: r.bytes, packets: r.packets });
            }
        }
        if let Some(o) = other {
            let at = kept.iter().position(|r| r.label == "NonIdentified").unwrap_or(kept.len());
            kept.insert(at, o);
        }
        percent_table(&self.title, &self.unit, kept).expect("total is unchanged and nonzero")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,count,percent_by_count,bytes,percent_by_bytes");
        let packets = self.has_packets();
        if packets {
            s.push_str(",packets,percent_by_packets");
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{},{},{},{}", csv_field(&r.label), r.count, r.percent_by_count, r.bytes, r.percent_by_bytes)
                .unwrap();
            if packets {
                let p = r.packets.unwrap_or(0);
                let pp = r.percent_by_packets.unwrap_or_default();
                write!(s, ",{p},{pp}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let packets = self.has_packets();
        let mut header = vec!["".to_string(), self.unit.clone(), "%".into(), "bytes".into(), "% bytes".into()];
        if packets {
            header.extend(["packets".to_string(), "% packets".into()]);
        }
        let mut lines = vec![header];
        for r in &self.rows {
            let mut l = vec![
                r.label.clone(),
                r.count.to_string(),
                r.percent_by_count.to_string(),
                r.bytes.to_string(),
                r.percent_by_bytes.to_string(),
            ];
            if packets {
                l.push(r.packets.unwrap_or(0).to_string());
                l.push(r.percent_by_packets.unwrap_or_default().to_string());
            }
            lines.push(l);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut s = format!("{}\n", self.title);
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                .collect();
            s.push_str(cells.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
