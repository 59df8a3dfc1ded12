//! Block transfer over the chain under three schemes: raw one-shot sends,
//! windowed end-to-end retransmission, and batched network coding with
//! per-relay recoding.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;

use crate::bats::{self, BatsParams, Batch, BlockDecoder, CodedPacket, SourceBlock};

use super::{ChainSim, EventKind, HopParams, NetsimError, NodeId, SimEvent, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferCoding {
    /// Send every packet once and report what made it.
    None,
    /// Batched coding with recoding at every relay.
    Bats,
    /// Windowed end-to-end resend of lost packets: the source transmits a
    /// window, waits for every ack or timeout, resends the losses, and only
    /// then moves the window. A stand-in for feedback-based transport, which
    /// stalls on every loss.
    Arq,
}

impl TransferCoding {
    pub fn label(self) -> &'static str {
        match self {
            TransferCoding::None => "none",
            TransferCoding::Bats => "bats",
            TransferCoding::Arq => "arq",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferParams {
    /// Payload bytes per packet.
    pub packet_len: usize,
    pub bats: BatsParams,
    /// Batches the source may emit before giving up.
    pub batch_budget: usize,
    pub arq_window: usize,
    /// Retransmission timeout as a multiple of the nominal path round trip.
    pub rto_factor: f64,
}

impl TransferParams {
    pub fn for_block(k: usize, packet_len: usize) -> Self {
        let bats = BatsParams::for_block(k);
        let batch_budget = (6 * k).div_ceil(bats.batch_size).max(8);
        Self {
            packet_len,
            bats,
            batch_budget,
            arq_window: 32,
            rto_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferOutcome {
    Complete,
    Partial,
    Timeout { rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub coding: TransferCoding,
    pub total_bytes: usize,
    pub delivered_bytes: usize,
    pub delivered_fraction: f64,
    pub elapsed: SimTime,
    pub goodput_mbps: f64,
    pub outcome: TransferOutcome,
    /// Batches the source put on the wire (coded mode only).
    pub batches_sent: usize,
    /// Transmissions attempted across all hops.
    pub packets_sent: u64,
    /// Whether the recovered block matched the source byte for byte.
    pub bit_exact: Option<bool>,
}

/// Heap entry ordered by (time, insertion sequence).
struct Queued {
    time: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

enum Ev {
    EmitBatch(usize),
    Arrive { pos: usize, pkt: CodedPacket },
    Flush { pos: usize, batch_id: u64 },
}

impl ChainSim {
    /// Move `block` from `src` to `dst` under the chosen scheme and report
    /// goodput. Goodput counts payload bytes over the time to completion.
    pub fn run_transfer(
        &mut self,
        src: NodeId,
        dst: NodeId,
        block: &SourceBlock,
        coding: TransferCoding,
        params: &TransferParams,
        start: SimTime,
    ) -> Result<TransferRecord, NetsimError> {
        let hops = self
            .route_table()
            .path(src, dst)
            .ok_or(NetsimError::Unreachable { src, dst })?;
        let mut path = vec![src];
        path.extend(hops);
        let link_params: Vec<HopParams> = path
            .windows(2)
            .map(|w| self.hop_params(w[0], w[1]))
            .collect::<Result<_, _>>()?;
        match coding {
            TransferCoding::None => self.transfer_plain(block, &path, &link_params, start),
            TransferCoding::Arq => self.transfer_arq(block, &path, &link_params, params, start),
            TransferCoding::Bats => self.transfer_bats(block, &path, &link_params, params, start),
        }
    }

    fn transfer_plain(
        &mut self,
        block: &SourceBlock,
        path: &[NodeId],
        links: &[HopParams],
        start: SimTime,
    ) -> Result<TransferRecord, NetsimError> {
        let k = block.packet_count();
        let len = block.packet_len();
        let mut free = vec![start.0; links.len()];
        let mut delivered = 0usize;
        let mut packets_sent = 0u64;
        let mut last_event = start.0;
        let mut last_arrival = start.0;
        for _ in 0..k {
            let mut t = start.0;
            let mut survived = true;
            for (h, hop) in links.iter().enumerate() {
                let dep = t.max(free[h]);
                let ser = self.serialization_us(*hop, len);
                free[h] = dep + ser;
                let arr = dep + ser + (hop.latency_ms * 1000.0).round() as u64;
                packets_sent += 1;
                last_event = last_event.max(arr);
                if self.draw(hop.loss_prob) {
                    self.trace_packet(EventKind::Drop, path[h], path[h + 1], len, arr, "lost");
                    survived = false;
                    break;
                }
                t = arr;
            }
            if survived {
                delivered += 1;
                last_arrival = last_arrival.max(t);
                self.trace_packet(EventKind::Deliver, path[0], path[path.len() - 1], len, t, "ok");
            }
        }
        let elapsed = if delivered > 0 {
            last_arrival - start.0
        } else {
            last_event - start.0
        }
        .max(1);
        let delivered_bytes = (delivered * len).min(block.data_len());
        Ok(TransferRecord {
            coding: TransferCoding::None,
            total_bytes: block.data_len(),
            delivered_bytes,
            delivered_fraction: delivered as f64 / k as f64,
            elapsed: SimTime(elapsed),
            goodput_mbps: delivered_bytes as f64 * 8.0 / elapsed as f64,
            outcome: if delivered == k {
                TransferOutcome::Complete
            } else {
                TransferOutcome::Partial
            },
            batches_sent: 0,
            packets_sent,
            bit_exact: None,
        })
    }

    fn transfer_arq(
        &mut self,
        block: &SourceBlock,
        path: &[NodeId],
        links: &[HopParams],
        params: &TransferParams,
        start: SimTime,
    ) -> Result<TransferRecord, NetsimError> {
        let k = block.packet_count();
        let len = block.packet_len();
        const ACK_BYTES: usize = 64;
        let forward_us: u64 = links
            .iter()
            .map(|h| self.serialization_us(*h, len) + (h.latency_ms * 1000.0).round() as u64)
            .sum();
        // acks ride the reverse path unopposed; they are small and never lost
        let ack_us: u64 = links
            .iter()
            .map(|h| self.serialization_us(*h, ACK_BYTES) + (h.latency_ms * 1000.0).round() as u64)
            .sum();
        let rto = ((forward_us + ack_us) as f64 * params.rto_factor).round() as u64;

        let mut free = vec![start.0; links.len()];
        let mut packets_sent = 0u64;
        let mut last_arrival = start.0;
        let mut clock = start.0;
        let window = params.arq_window.max(1);

        let mut w_start = 0;
        while w_start < k {
            let w_end = (w_start + window).min(k);
            let mut pending: Vec<usize> = (w_start..w_end).collect();
            let mut rounds = 0u32;
            while !pending.is_empty() {
                rounds += 1;
                if rounds > 10_000 {
                    return Ok(TransferRecord {
                        coding: TransferCoding::Arq,
                        total_bytes: block.data_len(),
                        delivered_bytes: w_start * len,
                        delivered_fraction: w_start as f64 / k as f64,
                        elapsed: SimTime((clock - start.0).max(1)),
                        goodput_mbps: 0.0,
                        outcome: TransferOutcome::Timeout { rank: w_start },
                        batches_sent: 0,
                        packets_sent,
                        bit_exact: None,
                    });
                }
                let mut round_end = clock;
                let mut missed = Vec::new();
                for &idx in &pending {
                    let mut t = clock;
                    let mut send_time = clock;
                    let mut survived = true;
                    for (h, hop) in links.iter().enumerate() {
                        let dep = t.max(free[h]);
                        let ser = self.serialization_us(*hop, len);
                        free[h] = dep + ser;
                        let arr = dep + ser + (hop.latency_ms * 1000.0).round() as u64;
                        if h == 0 {
                            send_time = dep;
                        }
                        packets_sent += 1;
                        if self.draw(hop.loss_prob) {
                            self.trace_packet(
                                EventKind::Drop,
                                path[h],
                                path[h + 1],
                                len,
                                arr,
                                "lost",
                            );
                            survived = false;
                            break;
                        }
                        t = arr;
                    }
                    if survived {
                        last_arrival = last_arrival.max(t);
                        round_end = round_end.max(t + ack_us);
                    } else {
                        // the source learns of the loss only when the timer fires
                        round_end = round_end.max(send_time + rto);
                        missed.push(idx);
                    }
                }
                clock = round_end;
                pending = missed;
            }
            w_start = w_end;
        }
        let elapsed = (last_arrival - start.0).max(1);
        Ok(TransferRecord {
            coding: TransferCoding::Arq,
            total_bytes: block.data_len(),
            delivered_bytes: block.data_len(),
            delivered_fraction: 1.0,
            elapsed: SimTime(elapsed),
            goodput_mbps: block.data_len() as f64 * 8.0 / elapsed as f64,
            outcome: TransferOutcome::Complete,
            batches_sent: 0,
            packets_sent,
            bit_exact: None,
        })
    }

    fn transfer_bats(
        &mut self,
        block: &SourceBlock,
        path: &[NodeId],
        links: &[HopParams],
        params: &TransferParams,
        start: SimTime,
    ) -> Result<TransferRecord, NetsimError> {
        params
            .bats
            .validate()
            .map_err(|e| NetsimError::BadTransfer(e.to_string()))?;
        let k = block.packet_count();
        let len = block.packet_len();
        let m = params.bats.batch_size;
        // coefficient vectors ride in-band on top of the payload
        let wire_len = len + m;
        let n_hops = links.len();
        let sink_pos = n_hops;

        // collection window per relay: one upstream batch transmission time
        let window_us: Vec<u64> = (1..n_hops)
            .map(|pos| {
                let upstream_count = if pos == 1 {
                    m
                } else {
                    params.bats.recode_output_count
                };
                upstream_count as u64 * self.serialization_us(links[pos - 1], wire_len)
            })
            .collect();

        let mut heap: BinaryHeap<Reverse<Queued>> = BinaryHeap::new();
        let mut seq = 0u64;
        let push = |heap: &mut BinaryHeap<Reverse<Queued>>, seq: &mut u64, time: u64, ev: Ev| {
            *seq += 1;
            heap.push(Reverse(Queued { time, seq: *seq, ev }));
        };

        let mut batches: Vec<Batch> = Vec::new();
        let mut buffers: Vec<BTreeMap<u64, Vec<CodedPacket>>> = vec![BTreeMap::new(); n_hops];
        let mut flushed: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); n_hops];
        let mut free = vec![start.0; n_hops];
        let mut decoder = BlockDecoder::new(k, len);
        let mut batches_sent = 0usize;
        let mut packets_sent = 0u64;
        let mut completion: Option<u64> = None;

        push(&mut heap, &mut seq, start.0, Ev::EmitBatch(0));

        while let Some(Reverse(Queued { time: now, ev, .. })) = heap.pop() {
            match ev {
                Ev::EmitBatch(idx) => {
                    if idx >= params.batch_budget {
                        continue;
                    }
                    let (batch, packets) =
                        bats::encode_batch(block, &params.bats, idx as u64, &mut self.rng_mut())
                            .map_err(|e| NetsimError::BadTransfer(e.to_string()))?;
                    batches.push(batch);
                    batches_sent += 1;
                    for pkt in packets {
                        let dep = now.max(free[0]);
                        let ser = self.serialization_us(links[0], wire_len);
                        free[0] = dep + ser;
                        let arr = dep + ser + (links[0].latency_ms * 1000.0).round() as u64;
                        packets_sent += 1;
                        if self.draw(links[0].loss_prob) {
                            self.trace_packet(EventKind::Drop, path[0], path[1], wire_len, arr, "lost");
                        } else {
                            push(&mut heap, &mut seq, arr, Ev::Arrive { pos: 1, pkt });
                        }
                    }
                    push(&mut heap, &mut seq, free[0], Ev::EmitBatch(idx + 1));
                }
                Ev::Arrive { pos, pkt } => {
                    if pos == sink_pos {
                        let batch = &batches[pkt.batch_id as usize];
                        decoder.absorb(batch, &pkt);
                        if decoder.is_complete() {
                            completion = Some(now);
                            break;
                        }
                    } else {
                        if flushed[pos].contains(&pkt.batch_id) {
                            // arrived after its batch was forwarded
                            self.trace_packet(
                                EventKind::Drop,
                                path[pos],
                                path[pos],
                                wire_len,
                                now,
                                "late",
                            );
                            continue;
                        }
                        let buffer = buffers[pos].entry(pkt.batch_id).or_default();
                        let first = buffer.is_empty();
                        let batch_id = pkt.batch_id;
                        buffer.push(pkt);
                        if first {
                            push(
                                &mut heap,
                                &mut seq,
                                now + window_us[pos - 1],
                                Ev::Flush { pos, batch_id },
                            );
                        }
                    }
                }
                Ev::Flush { pos, batch_id } => {
                    let Some(buffer) = buffers[pos].remove(&batch_id) else {
                        continue;
                    };
                    flushed[pos].insert(batch_id);
                    let outputs = bats::recode(
                        &buffer,
                        params.bats.recode_output_count,
                        &mut self.rng_mut(),
                    )
                    .map_err(|e| NetsimError::BadTransfer(e.to_string()))?;
                    for pkt in outputs {
                        let dep = now.max(free[pos]);
                        let ser = self.serialization_us(links[pos], wire_len);
                        free[pos] = dep + ser;
                        let arr = dep + ser + (links[pos].latency_ms * 1000.0).round() as u64;
                        packets_sent += 1;
                        if self.draw(links[pos].loss_prob) {
                            self.trace_packet(
                                EventKind::Drop,
                                path[pos],
                                path[pos + 1],
                                wire_len,
                                arr,
                                "lost",
                            );
                        } else {
                            push(&mut heap, &mut seq, arr, Ev::Arrive { pos: pos + 1, pkt });
                        }
                    }
                }
            }
        }

        match completion {
            Some(done) => {
                let recovered = decoder.recover().expect("decoder reported complete");
                let bit_exact = recovered == block.packets();
                debug_assert!(bit_exact, "decoded block must match the source");
                let elapsed = (done - start.0).max(1);
                Ok(TransferRecord {
                    coding: TransferCoding::Bats,
                    total_bytes: block.data_len(),
                    delivered_bytes: block.data_len(),
                    delivered_fraction: 1.0,
                    elapsed: SimTime(elapsed),
                    goodput_mbps: block.data_len() as f64 * 8.0 / elapsed as f64,
                    outcome: TransferOutcome::Complete,
                    batches_sent,
                    packets_sent,
                    bit_exact: Some(bit_exact),
                })
            }
            None => Ok(TransferRecord {
                coding: TransferCoding::Bats,
                total_bytes: block.data_len(),
                delivered_bytes: 0,
                delivered_fraction: 0.0,
                elapsed: SimTime(1),
                goodput_mbps: 0.0,
                outcome: TransferOutcome::Timeout {
                    rank: decoder.rank(),
                },
                batches_sent,
                packets_sent,
                bit_exact: None,
            }),
        }
    }

    fn draw(&mut self, loss_prob: f64) -> bool {
        self.rng_mut().gen::<f64>() < loss_prob
    }

    fn rng_mut(&mut self) -> &mut rand_chacha::ChaCha8Rng {
        &mut self.rng
    }

    fn trace_packet(
        &mut self,
        kind: EventKind,
        src: NodeId,
        dst: NodeId,
        bytes: usize,
        at: u64,
        outcome: &str,
    ) {
        self.record(SimEvent {
            time: SimTime(at),
            kind,
            src,
            dst,
            bytes,
            outcome: outcome.to_string(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{ChainSpec, SkipLinkParams};
    use rand::SeedableRng;

    fn test_block(k: usize, len: usize) -> SourceBlock {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7EA);
        let data: Vec<u8> = (0..k * len).map(|_| rng.gen()).collect();
        SourceBlock::from_bytes(&data, len).unwrap()
    }

    #[test]
    fn plain_lossless_goodput_is_bottleneck_minus_header_overhead() {
        let len = 1500usize;
        let header = 40usize;
        let spec = ChainSpec::uniform(2, 100.0, 0.0, 0.0).with_header_bytes(header);
        let mut sim = ChainSim::new(spec, 1).unwrap();
        let block = test_block(200, len);
        let rec = sim
            .run_transfer(
                NodeId(0),
                NodeId(1),
                &block,
                TransferCoding::None,
                &TransferParams::for_block(200, len),
                SimTime::ZERO,
            )
            .unwrap();
        assert_eq!(rec.outcome, TransferOutcome::Complete);
        assert!((rec.delivered_fraction - 1.0).abs() < 1e-12);
        let expected = 100.0 * len as f64 / (len + header) as f64;
        let rel = (rec.goodput_mbps - expected).abs() / expected;
        assert!(rel < 0.02, "goodput {} vs expected {expected}", rec.goodput_mbps);
    }

    #[test]
    fn plain_reports_delivered_fraction_under_loss() {
        let spec = ChainSpec::uniform(2, 100.0, 0.3, 0.0);
        let mut sim = ChainSim::new(spec, 5).unwrap();
        let block = test_block(500, 200);
        let rec = sim
            .run_transfer(
                NodeId(0),
                NodeId(1),
                &block,
                TransferCoding::None,
                &TransferParams::for_block(500, 200),
                SimTime::ZERO,
            )
            .unwrap();
        assert_eq!(rec.outcome, TransferOutcome::Partial);
        assert!((rec.delivered_fraction - 0.7).abs() < 0.06);
    }

    #[test]
    fn coded_one_hop_lossless_goodput_accounts_for_coding_overhead() {
        let len = 1500usize;
        let k = 64usize;
        let spec = ChainSpec::uniform(2, 100.0, 0.0, 0.1);
        let mut sim = ChainSim::new(spec, 2).unwrap();
        let block = test_block(k, len);
        let params = TransferParams::for_block(k, len);
        let rec = sim
            .run_transfer(NodeId(0), NodeId(1), &block, TransferCoding::Bats, &params, SimTime::ZERO)
            .unwrap();
        assert_eq!(rec.outcome, TransferOutcome::Complete);
        assert_eq!(rec.bit_exact, Some(true));
        // goodput sits between the link rate scaled by the full coding
        // overhead (a lower bound, since emission runs one batch ahead of
        // the decoder) and the payload fraction of the raw link rate
        let m = params.bats.batch_size;
        let floor = 100.0 * (k * len) as f64 / ((rec.batches_sent * m) as f64 * (len + m) as f64);
        let ceiling = 100.0 * len as f64 / (len + m) as f64;
        assert!(
            rec.goodput_mbps >= 0.95 * floor && rec.goodput_mbps <= ceiling + 1e-9,
            "goodput {} outside [{floor}, {ceiling}]",
            rec.goodput_mbps
        );
    }

    #[test]
    fn coded_transfer_survives_multi_hop_loss() {
        let spec = ChainSpec::uniform(4, 100.0, 0.2, 0.2);
        let mut sim = ChainSim::new(spec, 3).unwrap();
        let k = 64;
        let block = test_block(k, 256);
        let rec = sim
            .run_transfer(
                NodeId(0),
                NodeId(3),
                &block,
                TransferCoding::Bats,
                &TransferParams::for_block(k, 256),
                SimTime::ZERO,
            )
            .unwrap();
        assert_eq!(rec.outcome, TransferOutcome::Complete);
        assert_eq!(rec.bit_exact, Some(true));
        assert!(rec.batches_sent > 0);
    }

    #[test]
    fn arq_lossless_completes_below_link_rate() {
        let spec = ChainSpec::uniform(3, 100.0, 0.0, 0.5);
        let mut sim = ChainSim::new(spec, 4).unwrap();
        let block = test_block(128, 1500);
        let rec = sim
            .run_transfer(
                NodeId(0),
                NodeId(2),
                &block,
                TransferCoding::Arq,
                &TransferParams::for_block(128, 1500),
                SimTime::ZERO,
            )
            .unwrap();
        assert_eq!(rec.outcome, TransferOutcome::Complete);
        assert!(rec.goodput_mbps <= 100.0);
        assert!(rec.goodput_mbps > 10.0);
    }

    #[test]
    fn skip_link_at_half_bandwidth_halves_recovery_throughput() {
        let params = TransferParams::for_block(64, 1500);
        let block = test_block(64, 1500);
        let healthy = {
            let spec = ChainSpec::uniform(6, 100.0, 0.0, 0.2);
            let mut sim = ChainSim::new(spec, 11).unwrap();
            sim.run_transfer(NodeId(0), NodeId(5), &block, TransferCoding::None, &params, SimTime::ZERO)
                .unwrap()
        };
        let recovered = {
            let spec = ChainSpec::uniform(6, 100.0, 0.0, 0.2).with_skip(SkipLinkParams {
                bandwidth_mbps: 50.0,
                loss_prob: 0.0,
                latency_ms: 0.2,
            });
            let mut sim = ChainSim::new(spec, 11).unwrap();
            sim.fail_link(NodeId(2), NodeId(3)).unwrap();
            sim.run_transfer(NodeId(0), NodeId(5), &block, TransferCoding::None, &params, SimTime::ZERO)
                .unwrap()
        };
        let ratio = recovered.goodput_mbps / healthy.goodput_mbps;
        assert!(
            (ratio - 0.5).abs() < 0.08,
            "recovery throughput ratio {ratio} should sit near one half"
        );
    }

    #[test]
    fn coded_transfer_times_out_on_a_dead_path() {
        // total loss downstream: decode can never finish within the budget
        let mut spec = ChainSpec::uniform(3, 100.0, 0.0, 0.1);
        spec.links.get_mut(&(1, 2)).unwrap().loss_prob = 1.0;
        let mut sim = ChainSim::new(spec, 6).unwrap();
        let block = test_block(16, 64);
        let rec = sim
            .run_transfer(
                NodeId(0),
                NodeId(2),
                &block,
                TransferCoding::Bats,
                &TransferParams::for_block(16, 64),
                SimTime::ZERO,
            )
            .unwrap();
        match rec.outcome {
            TransferOutcome::Timeout { rank } => assert!(rank < 16),
            other => panic!("expected timeout, got {other:?}"),
        }
        assert_eq!(rec.goodput_mbps, 0.0);
    }
}
