//! Packet traces: CSV ingest, slot aggregation, and synthetic generation.
//!
//! The on-disk format is one packet per row,
//! `session_id,send_time_ms,recv_time_ms,size_bytes`, with `#` comment lines
//! and an optional literal header row. Times are milliseconds on the
//! respective clocks; the two clocks need not be synchronized.

use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay;
use crate::profile::{BandwidthSampler, ProfileError, ScenarioProfile};

pub const HEADER: &str = "session_id,send_time_ms,recv_time_ms,size_bytes";

/// Payload size the synthetic sender uses: one MTU-sized packet.
pub const MTU_BYTES: u32 = 1500;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// One delivered packet, the atomic trace unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub session_id: String,
    /// Sender-clock departure time.
    pub send_time_ms: f64,
    /// Receiver-clock arrival time.
    pub recv_time_ms: f64,
    pub size_bytes: u32,
}

/// Receiver-side aggregate of one fixed time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotObservation {
    pub slot_index: u64,
    /// Received bits over the slot divided by slot duration (kbit/s).
    pub throughput_kbps: f64,
    /// Mean inter-arrival minus inter-departure spacing over the slot's
    /// packets; carried forward from the previous slot when the slot has
    /// fewer than two packets.
    pub delay_gradient_ms: f64,
    pub packet_count: usize,
}

/// Parse the CSV trace format. Malformed rows abort with their line number.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<PacketRecord>, TraceError> {
    let mut records: Vec<PacketRecord> = Vec::new();
    // (session, last send time) for the order invariant; sessions are few.
    let mut last_send: Vec<(String, f64)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TraceError::Parse {
                line: line_no,
                reason: format!("expected 4 comma-separated fields, got {}", fields.len()),
            });
        }
        let session_id = fields[0].trim().to_string();
        if session_id.is_empty() {
            return Err(TraceError::Parse {
                line: line_no,
                reason: "empty session id".into(),
            });
        }
        let parse_num = |field: &str, name: &str| -> Result<f64, TraceError> {
            let v: f64 = field.trim().parse().map_err(|_| TraceError::Parse {
                line: line_no,
                reason: format!("{name} `{field}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(TraceError::Parse {
                    line: line_no,
                    reason: format!("{name} `{field}` is not finite"),
                });
            }
            Ok(v)
        };
        let send_time_ms = parse_num(fields[1], "send_time_ms")?;
        let recv_time_ms = parse_num(fields[2], "recv_time_ms")?;
        let size_bytes: u32 = fields[3].trim().parse().map_err(|_| TraceError::Parse {
            line: line_no,
            reason: format!("size_bytes `{}` is not a positive integer", fields[3]),
        })?;
        if size_bytes == 0 {
            return Err(TraceError::Parse {
                line: line_no,
                reason: "size_bytes must be > 0".into(),
            });
        }
        match last_send.iter_mut().find(|(s, _)| *s == session_id) {
            Some((_, last)) => {
                if send_time_ms < *last {
                    return Err(TraceError::Parse {
                        line: line_no,
                        reason: format!(
                            "send_time_ms {send_time_ms} goes backwards within session `{session_id}`"
                        ),
                    });
                }
                *last = send_time_ms;
            }
            None => last_send.push((session_id.clone(), send_time_ms)),
        }
        records.push(PacketRecord {
            session_id,
            send_time_ms,
            recv_time_ms,
            size_bytes,
        });
    }
    Ok(records)
}

/// Write records in the format `parse_trace` accepts (header + one row each).
pub fn serialize_trace<W: Write>(records: &[PacketRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{}",
            r.session_id, r.send_time_ms, r.recv_time_ms, r.size_bytes
        )?;
    }
    Ok(())
}

/// Aggregate packets into fixed slots by receiver time.
///
/// Slot 0 starts at the first record's `recv_time_ms`, which makes the whole
/// aggregation (indices, throughputs, gradients) invariant under a constant
/// receiver clock offset. Within a slot, the gradient is computed over packets
/// in send order; slots with fewer than two packets carry the previous
/// gradient forward (0 before any gradient exists).
pub fn slot_packets(records: &[PacketRecord], slot_duration_ms: f64) -> Vec<SlotObservation> {
    assert!(slot_duration_ms > 0.0, "slot duration must be positive");
    debug_assert!(
        records.windows(2).all(|w| w[0].recv_time_ms <= w[1].recv_time_ms),
        "records must be sorted by recv_time_ms"
    );
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let origin = first.recv_time_ms;
    let slot_of = |r: &PacketRecord| ((r.recv_time_ms - origin) / slot_duration_ms).floor() as u64;

    let mut slots = Vec::new();
    let mut carried_gradient = 0.0;
    let mut start = 0usize;
    let mut next_index = 0u64;
    while start < records.len() {
        let current = slot_of(&records[start]);
        // Emit empty slots between the previous batch and this one.
        while next_index < current {
            slots.push(SlotObservation {
                slot_index: next_index,
                throughput_kbps: 0.0,
                delay_gradient_ms: carried_gradient,
                packet_count: 0,
            });
            next_index += 1;
        }
        let mut end = start;
        while end < records.len() && slot_of(&records[end]) == current {
            end += 1;
        }
        let batch = &records[start..end];
        let bits: f64 = batch.iter().map(|r| r.size_bytes as f64 * 8.0).sum();
        let mut by_send: Vec<&PacketRecord> = batch.iter().collect();
        by_send.sort_by(|a, b| {
            a.send_time_ms
                .total_cmp(&b.send_time_ms)
                .then(a.recv_time_ms.total_cmp(&b.recv_time_ms))
        });
        if let Some(g) = delay::delay_gradient_refs(&by_send) {
            carried_gradient = g;
        }
        slots.push(SlotObservation {
            slot_index: current,
            throughput_kbps: bits / slot_duration_ms,
            delay_gradient_ms: carried_gradient,
            packet_count: batch.len(),
        });
        next_index = current + 1;
        start = end;
    }
    slots
}

/// Generate a synthetic trace: a sender saturating the profile's bandwidth
/// process, subject to random loss, base delay, mild queueing jitter, and the
/// profile's receiver clock offset. Deterministic per (profile, seed,
/// duration); only delivered packets are returned.
pub fn synth_trace(
    profile: &ScenarioProfile,
    seed: u64,
    duration_ms: f64,
) -> Result<Vec<PacketRecord>, TraceError> {
    profile.validate()?;
    let sampler = BandwidthSampler::new(&profile.bandwidth, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7472_6163); // "trac"
    let session_id = format!("synth-{}-{seed}", profile.name);

    let bits_per_packet = MTU_BYTES as f64 * 8.0;
    let mut records = Vec::new();
    let mut t = 0.0f64;
    let mut jitter_ms = 0.0f64;
    let mut last_recv = f64::NEG_INFINITY;
    while t < duration_ms {
        let interval = bits_per_packet / sampler.at(t);
        let send_time = t;
        t += interval;
        // One loss draw per offered packet keeps the stream aligned across
        // profiles that differ only in offset.
        let lost = rng.random::<f64>() < profile.loss_rate;
        // AR(1) queueing wiggle so gradients carry realistic noise.
        jitter_ms = (0.85 * jitter_ms + rng.random_range(-0.6..0.6f64)).max(0.0);
        if lost {
            continue;
        }
        let recv = send_time + profile.base_delay_ms + jitter_ms + profile.clock_offset_ms;
        let recv = recv.max(last_recv); // FIFO delivery
        last_recv = recv;
        records.push(PacketRecord {
            session_id: session_id.clone(),
            send_time_ms: send_time,
            recv_time_ms: recv,
            size_bytes: MTU_BYTES,
        });
    }
    Ok(records)
}
