use std::collections::BTreeMap;

use serde::Serialize;

use super::records::FlowRow;
use super::table::{percent_table, PercentTable, RowInput};
use super::ReportError;
use crate::classify::{Continent, Scope, ServiceCategory};
use crate::tcp::{DataClass, RttSummary};

/// Share of total bytes carried by flows matching `pred`; 0 for no bytes.
pub fn volume_share<T>(flows: &[T], bytes: impl Fn(&T) -> u64, pred: impl Fn(&T) -> bool) -> f64 {
    let total: u64 = flows.iter().map(&bytes).sum();
    if total == 0 {
        return 0.0;
    }
    let sel: u64 = flows.iter().filter(|f| pred(f)).map(&bytes).sum();
    sel as f64 / total as f64
}

/// Packets per flow carrying a window reduction.
pub fn window_reduction_ratio(marked_packets: u64, flows: u64) -> Option<f64> {
    (flows > 0).then(|| marked_packets as f64 / flows as f64)
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub count: u64,
    pub bytes: u64,
    pub packets: u64,
}

impl Tally {
    fn add(&mut self, count: u64, bytes: u64, packets: u64) {
        self.count += count;
        self.bytes += bytes;
        self.packets += packets;
    }

    fn merge(&mut self, o: &Tally) {
        self.add(o.count, o.bytes, o.packets);
    }
}

pub const DURATION_SHARE_LONG_US: u64 = 300_000_000;
pub const DURATION_SHARE_SHORT_US: u64 = 3_000_000;
pub const LENGTH_SHARE_PACKETS: u64 = 100;

/// Pure fold over exported flow rows. `merge` is associative and
/// commutative up to the order of the sample vectors, which only feed
/// order-independent statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregates {
    pub flows: u64,
    pub bidirectional_flows: u64,
    pub scope: BTreeMap<Scope, Tally>,
    pub continent: BTreeMap<Continent, Tally>,
    pub transport: BTreeMap<u8, Tally>,
    pub service: BTreeMap<ServiceCategory, Tally>,
    pub data_classes: [u64; 5],

    pub tcp_flows: u64,
    pub tcp_bytes: u64,
    pub tcp_lengths: Vec<u64>,
    /// Durations of TCP flows with more than one packet.
    pub tcp_durations_us: Vec<u64>,
    pub tcp_rates_bps: Vec<f64>,
    pub single_packet_flows: u64,
    pub undefined_rate_flows: u64,
    pub bytes_length_below_100: u64,
    pub bytes_duration_above_300s: u64,
    pub bytes_duration_at_most_3s: u64,

    pub window_reduction_packets: u64,
    pub flows_with_window_reduction: u64,
    pub zero_window_packets: u64,
    pub ece_packets: u64,
    pub cwr_packets: u64,
    pub congestion_events: u64,
    pub flows_with_flag_evidence: u64,
    pub correlated_congestion_events: u64,
    pub lost_segments: u64,
    pub lost_bytes: u64,
    pub dup_acks: u64,
    pub late_fillers: u64,
    pub syn_retries: u64,
    pub flows_with_syn_retry: u64,
    pub failures_no_answer: u64,
    pub failures_refused: u64,
    pub handshake_rtt_us: Vec<u64>,
    pub flow_median_rtt_us: Vec<f64>,
}

impl Aggregates {
    pub fn add(&mut self, r: &FlowRow) {
        self.flows += 1;
        self.bidirectional_flows += u64::from(r.bidirectional);
        for (packets, bytes, scope, continent) in [
            (r.packets_fwd, r.bytes_fwd, &r.scope_fwd, &r.continent_fwd),
            (r.packets_rev, r.bytes_rev, &r.scope_rev, &r.continent_rev),
        ] {
            if packets == 0 {
                continue;
            }
            let scope = Scope::parse(scope).unwrap_or(Scope::Wan);
            self.scope.entry(scope).or_default().add(packets, bytes, packets);
            if scope == Scope::Wan {
                let c = Continent::parse(continent).unwrap_or(Continent::Unknown);
                self.continent.entry(c).or_default().add(packets, bytes, packets);
            }
        }
        self.transport.entry(r.protocol).or_default().add(r.packets, r.bytes, r.packets);
        if !r.is_tcp() {
            return;
        }
        self.service.entry(ServiceCategory::from_label(&r.service)).or_default().add(1, r.bytes, r.packets);
        let classes = [
            (DataClass::InOrder, r.data_in_order),
            (DataClass::RetransmissionPlain, r.data_retx_plain),
            (DataClass::RetransmissionFast, r.data_retx_fast),
            (DataClass::RetransmissionSpurious, r.data_retx_spurious),
            (DataClass::OutOfOrder, r.data_out_of_order),
        ];
        for (c, n) in classes {
            self.data_classes[c.index()] += n;
        }

        self.tcp_flows += 1;
        self.tcp_bytes += r.bytes;
        self.tcp_lengths.push(r.packets);
        if r.packets > 1 {
            self.tcp_durations_us.push(r.duration_us);
        } else {
            self.single_packet_flows += 1;
        }
        match r.mean_rate_bps {
            Some(rate) => self.tcp_rates_bps.push(rate),
            None => self.undefined_rate_flows += 1,
        }
        if r.packets < LENGTH_SHARE_PACKETS {
            self.bytes_length_below_100 += r.bytes;
        }
        if r.duration_us > DURATION_SHARE_LONG_US {
            self.bytes_duration_above_300s += r.bytes;
        }
        if r.duration_us <= DURATION_SHARE_SHORT_US {
            self.bytes_duration_at_most_3s += r.bytes;
        }

        self.window_reduction_packets += r.window_reductions;
        self.flows_with_window_reduction += u64::from(r.window_reductions > 0);
        self.zero_window_packets += r.zero_windows;
        self.ece_packets += r.ece_packets;
        self.cwr_packets += r.cwr_packets;
        self.congestion_events += u64::from(r.congestion_flag + r.congestion_correlated);
        self.flows_with_flag_evidence += u64::from(r.congestion_flag > 0);
        self.correlated_congestion_events += u64::from(r.congestion_correlated);
        self.lost_segments += r.lost_segments;
        self.lost_bytes += r.lost_bytes;
        self.dup_acks += r.dup_acks;
        self.late_fillers += r.late_fillers;
        self.syn_retries += u64::from(r.syn_retries);
        self.flows_with_syn_retry += u64::from(r.syn_retries > 0);
        match r.establishment.as_str() {
            "no_answer" => self.failures_no_answer += 1,
            "refused" => self.failures_refused += 1,
            _ => {}
        }
        if let Some(h) = r.rtt_handshake_us {
            self.handshake_rtt_us.push(h);
        }
        if let Some(m) = r.rtt_median_us {
            self.flow_median_rtt_us.push(m);
        }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a FlowRow>) -> Aggregates {
        let mut a = Aggregates::default();
        for r in rows {
            a.add(r);
        }
        a
    }

    pub fn merge(&mut self, o: &Aggregates) {
        fn merge_map<K: Ord + Clone>(a: &mut BTreeMap<K, Tally>, b: &BTreeMap<K, Tally>) {
            for (k, t) in b {
                a.entry(k.clone()).or_default().merge(t);
            }
        }
        self.flows += o.flows;
        self.bidirectional_flows += o.bidirectional_flows;
        merge_map(&mut self.scope, &o.scope);
        merge_map(&mut self.continent, &o.continent);
        merge_map(&mut self.transport, &o.transport);
        merge_map(&mut self.service, &o.service);
        for (a, b) in self.data_classes.iter_mut().zip(o.data_classes) {
            *a += b;
        }
        self.tcp_flows += o.tcp_flows;
        self.tcp_bytes += o.tcp_bytes;
        self.tcp_lengths.extend(&o.tcp_lengths);
        self.tcp_durations_us.extend(&o.tcp_durations_us);
        self.tcp_rates_bps.extend(&o.tcp_rates_bps);
        self.single_packet_flows += o.single_packet_flows;
        self.undefined_rate_flows += o.undefined_rate_flows;
        self.bytes_length_below_100 += o.bytes_length_below_100;
        self.bytes_duration_above_300s += o.bytes_duration_above_300s;
        self.bytes_duration_at_most_3s += o.bytes_duration_at_most_3s;
        self.window_reduction_packets += o.window_reduction_packets;
        self.flows_with_window_reduction += o.flows_with_window_reduction;
        self.zero_window_packets += o.zero_window_packets;
        self.ece_packets += o.ece_packets;
        self.cwr_packets += o.cwr_packets;
        self.congestion_events += o.congestion_events;
        self.flows_with_flag_evidence += o.flows_with_flag_evidence;
        self.correlated_congestion_events += o.correlated_congestion_events;
        self.lost_segments += o.lost_segments;
        self.lost_bytes += o.lost_bytes;
        self.dup_acks += o.dup_acks;
        self.late_fillers += o.late_fillers;
        self.syn_retries += o.syn_retries;
        self.flows_with_syn_retry += o.flows_with_syn_retry;
        self.failures_no_answer += o.failures_no_answer;
        self.failures_refused += o.failures_refused;
        self.handshake_rtt_us.extend(&o.handshake_rtt_us);
        self.flow_median_rtt_us.extend(&o.flow_median_rtt_us);
    }

    pub fn scope_table(&self) -> Result<PercentTable, ReportError> {
        let rows = [Scope::Lan, Scope::Man, Scope::Wan]
            .into_iter()
            .map(|s| {
                let t = self.scope.get(&s).copied().unwrap_or_default();
                RowInput::new(s.label(), t.count, t.bytes)
            })
            .collect();
        percent_table("Traffic by scope", "packets", rows)
    }

    pub fn continent_table(&self) -> Result<PercentTable, ReportError> {
        let rows = Continent::ALL
            .into_iter()
            .map(|c| {
                let t = self.continent.get(&c).copied().unwrap_or_default();
                RowInput::new(c.label(), t.count, t.bytes)
            })
            .collect();
        percent_table("WAN packets by continent of the remote endpoint", "packets", rows)
    }

    pub fn transport_table(&self) -> Result<PercentTable, ReportError> {
        let mut protos: Vec<u8> = vec![1, 2, 6, 17];
        protos.extend(self.transport.keys().filter(|p| ![1, 2, 6, 17].contains(*p)));
        let rows = protos
            .into_iter()
            .map(|p| {
                let t = self.transport.get(&p).copied().unwrap_or_default();
                RowInput::new(crate::classify::classify_transport(p).label(), t.count, t.bytes)
            })
            .collect();
        percent_table("Packets by transport protocol", "packets", rows)
    }

    /// Per-flow service shares with a per-packet column; named services
    /// below the threshold fold into `Other`.
    pub fn service_table(&self, other_threshold_percent: f64) -> Result<PercentTable, ReportError> {
        let fixed = [
            ServiceCategory::Ssh,
            ServiceCategory::Dns,
            ServiceCategory::Mail,
            ServiceCategory::Http,
            ServiceCategory::Https,
        ];
        let mut cats: Vec<ServiceCategory> = fixed.to_vec();
        cats.extend(self.service.keys().filter(|c| matches!(c, ServiceCategory::Named(_))).cloned());
        cats.push(ServiceCategory::NonIdentified);
        let rows = cats
            .iter()
            .map(|c| {
                let t = self.service.get(c).copied().unwrap_or_default();
                RowInput::new(c.label(), t.count, t.bytes).with_packets(t.packets)
            })
            .collect();
        let t = percent_table("TCP flows by service", "flows", rows)?;
        let named: Vec<String> =
            cats.iter().filter(|c| matches!(c, ServiceCategory::Named(_))).map(|c| c.label().to_string()).collect();
        Ok(t.fold_other(other_threshold_percent, |l| named.iter().any(|n| n == l)))
    }

    pub fn packets_spreading_table(&self) -> Result<PercentTable, ReportError> {
        let rows = DataClass::ALL
            .into_iter()
            .map(|c| RowInput::new(c.label(), self.data_classes[c.index()], 0))
            .collect();
        percent_table("TCP data packets by retransmission class", "packets", rows)
    }

    pub fn durations_s(&self) -> Vec<f64> {
        self.tcp_durations_us.iter().map(|&d| d as f64 / 1e6).collect()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.tcp_lengths.iter().map(|&l| l as f64).collect()
    }

    pub fn handshake_rtt_summary(&self) -> Option<RttSummary> {
        RttSummary::from_micros(&self.handshake_rtt_us)
    }
}
