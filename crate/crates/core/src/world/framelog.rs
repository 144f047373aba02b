//! Frame log CSV: `frame,aircraft_id,x,y,z,vx,vy,vz,infected`.

use std::io::{self, BufRead, Write};

use super::WorldState;

pub const FRAME_HEADER: &str = "frame,aircraft_id,x,y,z,vx,vy,vz,infected";

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub frame: u64,
    pub aircraft_id: usize,
    pub position: crate::geom::Vec3,
    pub velocity: crate::geom::Vec3,
    pub infected: bool,
}

pub fn write_frame_header<W: Write>(out: &mut W) -> io::Result<()> {
    writeln!(out, "{FRAME_HEADER}")
}

pub fn write_frame_rows<W: Write>(out: &mut W, w: &WorldState) -> io::Result<()> {
    for a in &w.aircraft {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            w.frame,
            a.id,
            a.position.x,
            a.position.y,
            a.position.z,
            a.velocity.x,
            a.velocity.y,
            a.velocity.z,
            u8::from(a.infected)
        )?;
    }
    Ok(())
}

/// Parses a frame log. Errors carry the 1-based line number.
pub fn read_frame_log<R: BufRead>(input: R) -> Result<Vec<FrameRow>, String> {
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| format!("line {lineno}: {e}"))?;
        if idx == 0 {
            if line.trim() != FRAME_HEADER {
                return Err(format!("line 1: expected header `{FRAME_HEADER}`"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(format!("line {lineno}: expected 9 columns, found {}", cols.len()));
        }
        let num = |k: usize| -> Result<f64, String> {
            cols[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("line {lineno}, column {}: {e}", k + 1))
        };
        let frame = cols[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| format!("line {lineno}, column 1: {e}"))?;
        let aircraft_id = cols[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| format!("line {lineno}, column 2: {e}"))?;
        let infected = match cols[8].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(format!("line {lineno}, column 9: bad flag `{other}`")),
        };
        rows.push(FrameRow {
            frame,
            aircraft_id,
            position: crate::geom::Vec3::new(num(2)?, num(3)?, num(4)?),
            velocity: crate::geom::Vec3::new(num(5)?, num(6)?, num(7)?),
            infected,
        });
    }
    Ok(rows)
}
