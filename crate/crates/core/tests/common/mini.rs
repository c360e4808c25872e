//! Hand-written recursion for one spout feeding one terminal bolt, used as an
//! independent oracle for the engine's queue dynamics.

use std::fmt::Write as _;

pub struct MiniParams {
    pub window: usize,
    pub gamma: u64,
    pub mu: u64,
    pub v: f64,
    pub beta: f64,
    /// Link cost spout -> bolt.
    pub u: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniRow {
    pub slot: u64,
    pub rem: Vec<u64>,
    pub q_out: u64,
    pub q_in: u64,
    pub in_flight: u64,
    pub x: u64,
    pub processed: u64,
    pub theta: u64,
    pub h: f64,
}

pub const HEADER: &str = "slot,rem,q_out,q_in,in_flight,x,processed,theta,h";

impl MiniRow {
    pub fn csv(&self) -> String {
        let rem: Vec<String> = self.rem.iter().map(|r| r.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.slot,
            rem.join(" "),
            self.q_out,
            self.q_in,
            self.in_flight,
            self.x,
            self.processed,
            self.theta,
            self.h
        )
    }
}

/// Perfect prediction: cell w at slot t holds lambda(t + w) minus what was
/// already sent of it. Slot 0's own arrivals show up only when revealed.
pub fn simulate(p: &MiniParams, lambda: &[u64], slots: u64) -> Vec<MiniRow> {
    let w = p.window;
    let mut rem: Vec<u64> = (0..=w).map(|k| if k == 0 { 0 } else { lambda[k] }).collect();
    let (mut q_in, mut in_flight) = (0u64, 0u64);
    let mut rows = Vec::new();
    for t in 0..slots {
        if t == 0 {
            rem[0] = lambda[0];
        }
        let q_out: u64 = rem.iter().sum();
        let h = q_in as f64 + p.beta * q_out as f64;
        let l = p.v * p.u as f64 + q_in as f64 - p.beta * q_out as f64;
        let flush = rem[0].min(p.gamma);
        let x = if l < 0.0 { q_out.min(p.gamma) } else { flush };
        let row_rem = rem.clone();

        // earliest cells leave first
        let mut left = x;
        let mut served = vec![0; w + 1];
        for k in 0..=w {
            served[k] = left.min(rem[k]);
            left -= served[k];
        }

        let avail = q_in + in_flight;
        let processed = avail.min(p.mu);
        rows.push(MiniRow {
            slot: t,
            rem: row_rem,
            q_out,
            q_in,
            in_flight,
            x,
            processed,
            theta: x * p.u,
            h,
        });
        q_in = avail - processed;
        in_flight = x;

        let mut next = vec![0; w + 1];
        for k in 0..w {
            next[k] = rem[k + 1] - served[k + 1];
        }
        next[w] = lambda[t as usize + w + 1];
        assert_eq!(rem[0], served[0], "slot {t}: arrivals left behind");
        rem = next;
    }
    rows
}

pub fn to_csv(rows: &[MiniRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv()).unwrap();
    }
    out
}
