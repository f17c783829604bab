//! Usage metering, allocations, invoices, and capacity reporting.
//!
//! Events append to a newline-delimited log. Monetary amounts are integer
//! cents so invoice totals are exact and independent of event order. Peered
//! transfers under a no-cost agreement are forced to amount 0 but are still
//! recorded and invoiced, an invoice is emitted even when its total is zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::accessctl::PrincipalId;
use crate::error::{CommonsError, Result};

/// Default compute price: $0.40 per core hour, so 100,000 core hours bill at
/// $40,000 per month.
pub const DEFAULT_CORE_HOUR_PRICE: f64 = 0.40;

/// Compute target utilization default: 85% of capacity.
pub const DEFAULT_COMPUTE_TARGET: f64 = 0.85;
/// Storage target utilization default: 80% of capacity.
pub const DEFAULT_STORAGE_TARGET: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageKind {
    CoreHours,
    StorageByteHours,
    EgressBytes,
}

impl fmt::Display for UsageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UsageKind::CoreHours => "core_hours",
            UsageKind::StorageByteHours => "storage_byte_hours",
            UsageKind::EgressBytes => "egress_bytes",
        };
        f.write_str(s)
    }
}

/// A calendar month in UTC, e.g. "2015-09".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    pub year: i32,
    pub month: u32,
}

impl Period {
    pub fn of(ts: &DateTime<Utc>) -> Period {
        Period {
            year: ts.year(),
            month: ts.month(),
        }
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        ts.year() == self.year && ts.month() == self.month
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl std::str::FromStr for Period {
    type Err = CommonsError;

    fn from_str(s: &str) -> Result<Period> {
        let parse = || -> Option<Period> {
            let (y, m) = s.split_once('-')?;
            let month: u32 = m.parse().ok()?;
            if !(1..=12).contains(&month) {
                return None;
            }
            Some(Period {
                year: y.parse().ok()?,
                month,
            })
        };
        parse().ok_or_else(|| CommonsError::MalformedQuery(format!("bad period: {s:?}")))
    }
}

impl Serialize for Period {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Period, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub actor: PrincipalId,
    pub kind: UsageKind,
    pub quantity: f64,
    /// Currency per unit, in dollars.
    pub unit_price: f64,
    pub timestamp: DateTime<Utc>,
    /// Peer agreement this transfer ran under, if any. A no-cost agreement
    /// zero-prices the event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub actor: PrincipalId,
    pub kind: UsageKind,
    /// Cap per calendar month, in the kind's unit.
    pub cap: f64,
    pub hard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvoiceLine {
    pub kind: UsageKind,
    pub quantity: f64,
    pub amount_cents: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invoice {
    pub actor: PrincipalId,
    pub period: Period,
    pub lines: Vec<InvoiceLine>,
    pub total_cents: i64,
}

impl Invoice {
    pub fn total_dollars(&self) -> f64 {
        self.total_cents as f64 / 100.0
    }
}

/// Outcome of recording an event: accepted, possibly flagged by a soft cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub accepted: bool,
    pub soft_cap_flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
enum MeterLine {
    Event(UsageEvent),
    Allocation(Allocation),
}

pub struct Meter {
    file: File,
    events: Vec<UsageEvent>,
    allocations: Vec<Allocation>,
    no_cost_peers: BTreeSet<String>,
}

impl Meter {
    pub fn open(path: &Path, no_cost_peers: BTreeSet<String>) -> Result<Meter> {
        let mut events = Vec::new();
        let mut allocations = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<MeterLine>(&line)? {
                    MeterLine::Event(e) => events.push(e),
                    MeterLine::Allocation(a) => {
                        upsert_allocation(&mut allocations, a);
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Meter {
            file,
            events,
            allocations,
            no_cost_peers,
        })
    }

    fn append_line(&mut self, line: &MeterLine) -> Result<()> {
        let mut text = serde_json::to_string(line)?;
        text.push('\n');
        self.file.write_all(text.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }

    /// Priced amount of an event in cents, honoring no-cost peering.
    pub fn amount_cents(&self, event: &UsageEvent) -> i64 {
        if event
            .peer_tag
            .as_deref()
            .is_some_and(|p| self.no_cost_peers.contains(p))
        {
            return 0;
        }
        (event.quantity * event.unit_price * 100.0).round() as i64
    }

    pub fn set_allocation(&mut self, allocation: Allocation) -> Result<()> {
        if allocation.cap <= 0.0 {
            return Err(CommonsError::MalformedQuery(
                "allocation cap must be positive".into(),
            ));
        }
        self.append_line(&MeterLine::Allocation(allocation.clone()))?;
        upsert_allocation(&mut self.allocations, allocation);
        Ok(())
    }

    fn month_total(&self, actor: &PrincipalId, kind: UsageKind, period: Period) -> f64 {
        self.events
            .iter()
            .filter(|e| &e.actor == actor && e.kind == kind && period.contains(&e.timestamp))
            .map(|e| e.quantity)
            .sum()
    }

    /// Append a usage event. Hard allocations reject events that would exceed
    /// the monthly cap; soft allocations accept and flag.
    pub fn record_usage(&mut self, event: UsageEvent) -> Result<RecordOutcome> {
        if !(event.quantity >= 0.0) {
            return Err(CommonsError::MalformedQuery(
                "event quantity must be non-negative".into(),
            ));
        }
        let mut flagged = false;
        let allocation = self
            .allocations
            .iter()
            .find(|a| a.actor == event.actor && a.kind == event.kind);
        if let Some(a) = allocation {
            let period = Period::of(&event.timestamp);
            let attempted = self.month_total(&event.actor, event.kind, period) + event.quantity;
            if attempted > a.cap {
                if a.hard {
                    return Err(CommonsError::AllocationExceeded {
                        actor: event.actor.to_string(),
                        kind: event.kind.to_string(),
                        cap: a.cap,
                        attempted,
                    });
                }
                flagged = true;
            }
        }
        self.append_line(&MeterLine::Event(event.clone()))?;
        self.events.push(event);
        Ok(RecordOutcome {
            accepted: true,
            soft_cap_flagged: flagged,
        })
    }

    pub fn events(&self) -> &[UsageEvent] {
        &self.events
    }

    /// Aggregate an actor's events for a calendar month into an invoice.
    pub fn monthly_invoice(&self, actor: &PrincipalId, period: Period) -> Invoice {
        let mut by_kind: BTreeMap<UsageKind, (f64, i64)> = BTreeMap::new();
        for e in self
            .events
            .iter()
            .filter(|e| &e.actor == actor && period.contains(&e.timestamp))
        {
            let entry = by_kind.entry(e.kind).or_insert((0.0, 0));
            entry.0 += e.quantity;
            entry.1 += self.amount_cents(e);
        }
        let lines: Vec<InvoiceLine> = by_kind
            .into_iter()
            .map(|(kind, (quantity, amount_cents))| InvoiceLine {
                kind,
                quantity,
                amount_cents,
            })
            .collect();
        let total_cents = lines.iter().map(|l| l.amount_cents).sum();
        Invoice {
            actor: actor.clone(),
            period,
            lines,
            total_cents,
        }
    }

    /// For each cutoff, the number of distinct actors whose core-hour total
    /// for the period is at least the cutoff. Counts are non-increasing.
    pub fn threshold_report(&self, period: Period, cutoffs: &[f64]) -> Result<Vec<(f64, usize)>> {
        if cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CommonsError::MalformedQuery(
                "thresholds must be strictly increasing".into(),
            ));
        }
        let mut totals: BTreeMap<&PrincipalId, f64> = BTreeMap::new();
        for e in self
            .events
            .iter()
            .filter(|e| e.kind == UsageKind::CoreHours && period.contains(&e.timestamp))
        {
            *totals.entry(&e.actor).or_insert(0.0) += e.quantity;
        }
        Ok(cutoffs
            .iter()
            .map(|&cut| (cut, totals.values().filter(|&&t| t >= cut).count()))
            .collect())
    }
}

fn upsert_allocation(allocations: &mut Vec<Allocation>, a: Allocation) {
    if let Some(existing) = allocations
        .iter_mut()
        .find(|x| x.actor == a.actor && x.kind == a.kind)
    {
        *existing = a;
    } else {
        allocations.push(a);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceUtilization {
    pub used: f64,
    pub total: f64,
    pub fraction: f64,
    pub over_target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub compute: ResourceUtilization,
    pub storage: ResourceUtilization,
}

/// Utilization fractions with over-target flags. Sitting exactly on the
/// target counts as within target.
pub fn capacity_report(
    compute_used: f64,
    compute_total: f64,
    storage_used: f64,
    storage_total: f64,
    compute_target: f64,
    storage_target: f64,
) -> Result<CapacityReport> {
    if compute_total <= 0.0 || storage_total <= 0.0 {
        return Err(CommonsError::MalformedQuery(
            "capacity totals must be positive".into(),
        ));
    }
    let utilization = |used: f64, total: f64, target: f64| ResourceUtilization {
        used,
        total,
        fraction: used / total,
        over_target: used / total > target,
    };
    Ok(CapacityReport {
        compute: utilization(compute_used, compute_total, compute_target),
        storage: utilization(storage_used, storage_total, storage_target),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use tempfile::TempDir;

    fn ts(day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2015, 9, day, 12, 0, 0).unwrap()
    }

    fn meter(dir: &TempDir) -> Meter {
        Meter::open(
            &dir.path().join("usage.ndjson"),
            BTreeSet::from(["peer-commons".to_string()]),
        )
        .unwrap()
    }

    fn core_hours(actor: &str, qty: f64, day: u32) -> UsageEvent {
        UsageEvent {
            actor: PrincipalId::user(actor),
            kind: UsageKind::CoreHours,
            quantity: qty,
            unit_price: DEFAULT_CORE_HOUR_PRICE,
            timestamp: ts(day),
            peer_tag: None,
        }
    }

    #[test]
    fn hundred_thousand_core_hours_is_forty_thousand_dollars() {
        let dir = TempDir::new().unwrap();
        let mut m = meter(&dir);
        m.record_usage(core_hours("u", 100_000.0, 1)).unwrap();
        let invoice = m.monthly_invoice(&PrincipalId::user("u"), "2015-09".parse().unwrap());
        assert_eq!(invoice.total_cents, 4_000_000);
        assert_eq!(invoice.total_dollars(), 40_000.0);
    }

    #[test]
    fn hard_cap_rejects_soft_cap_flags() {
        let dir = TempDir::new().unwrap();
        let mut m = meter(&dir);
        m.set_allocation(Allocation {
            actor: PrincipalId::user("u"),
            kind: UsageKind::CoreHours,
            cap: 200.0,
            hard: true,
        })
        .unwrap();
        assert!(!m
            .record_usage(core_hours("u", 100.0, 1))
            .unwrap()
            .soft_cap_flagged);
        assert!(matches!(
            m.record_usage(core_hours("u", 150.0, 2)),
            Err(CommonsError::AllocationExceeded { .. })
        ));
        m.set_allocation(Allocation {
            actor: PrincipalId::user("u"),
            kind: UsageKind::CoreHours,
            cap: 200.0,
            hard: false,
        })
        .unwrap();
        let outcome = m.record_usage(core_hours("u", 150.0, 2)).unwrap();
        assert!(outcome.accepted && outcome.soft_cap_flagged);
    }

    #[test]
    fn peered_events_are_zero_priced() {
        let dir = TempDir::new().unwrap();
        let mut m = meter(&dir);
        m.record_usage(UsageEvent {
            actor: PrincipalId::user("u"),
            kind: UsageKind::EgressBytes,
            quantity: 1e12,
            unit_price: 0.09,
            timestamp: ts(3),
            peer_tag: Some("peer-commons".into()),
        })
        .unwrap();
        let invoice = m.monthly_invoice(&PrincipalId::user("u"), "2015-09".parse().unwrap());
        assert_eq!(invoice.lines.len(), 1);
        assert_eq!(invoice.total_cents, 0);
    }

    #[test]
    fn empty_invoice_has_zero_lines() {
        let dir = TempDir::new().unwrap();
        let m = meter(&dir);
        let invoice = m.monthly_invoice(&PrincipalId::user("nobody"), "2015-09".parse().unwrap());
        assert!(invoice.lines.is_empty());
        assert_eq!(invoice.total_cents, 0);
    }

    #[test]
    fn invoice_survives_reopen() {
        let dir = TempDir::new().unwrap();
        {
            let mut m = meter(&dir);
            m.record_usage(core_hours("u", 42.0, 1)).unwrap();
        }
        let m = meter(&dir);
        let invoice = m.monthly_invoice(&PrincipalId::user("u"), "2015-09".parse().unwrap());
        assert_eq!(invoice.lines[0].quantity, 42.0);
    }

    #[test]
    fn threshold_counts_non_increasing() {
        let dir = TempDir::new().unwrap();
        let mut m = meter(&dir);
        for (i, qty) in [25_000.0, 60_000.0, 120_000.0, 250_000.0, 10.0].iter().enumerate() {
            m.record_usage(core_hours(&format!("u{i}"), *qty, 1)).unwrap();
        }
        let report = m
            .threshold_report("2015-09".parse().unwrap(), &[20_000.0, 50_000.0, 100_000.0, 200_000.0])
            .unwrap();
        let counts: Vec<usize> = report.iter().map(|(_, c)| *c).collect();
        assert_eq!(counts, vec![4, 3, 2, 1]);
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert!(m
            .threshold_report("2015-09".parse().unwrap(), &[5.0, 5.0])
            .is_err());
    }

    #[test]
    fn capacity_boundary_is_within_target() {
        let r = capacity_report(85.0, 100.0, 50.0, 100.0, DEFAULT_COMPUTE_TARGET, DEFAULT_STORAGE_TARGET)
            .unwrap();
        assert_eq!(r.compute.fraction, 0.85);
        assert!(!r.compute.over_target);
        let r = capacity_report(86.0, 100.0, 81.0, 100.0, DEFAULT_COMPUTE_TARGET, DEFAULT_STORAGE_TARGET)
            .unwrap();
        assert!(r.compute.over_target);
        assert!(r.storage.over_target);
        let r = capacity_report(0.0, 100.0, 0.0, 100.0, DEFAULT_COMPUTE_TARGET, DEFAULT_STORAGE_TARGET)
            .unwrap();
        assert_eq!(r.compute.fraction, 0.0);
    }
}
