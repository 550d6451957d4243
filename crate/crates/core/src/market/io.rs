//! Dataset persistence.
//!
//! One file per day. The canonical form is JSON lines: a header record
//! followed by one record per auction. The binary form stores the same header
//! as JSON followed by little-endian columns and converts losslessly.
//!
//! ```text
//! day_0007.jsonl
//!   {"record":"header","day_id":7,"split":"train","mechanism":"MIX",...}
//!   {"record":"auction","index":0,"utility_estimate":1.2,...}
//!
//! day_0007.bin
//!   b"ADVBDAY1" | u32 header_len | header JSON | u64 n
//!   | n x u32 index | n x f64 utility_estimate | n x f64 realized_utility | n x f64 market_price
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AuctionRecord, EnvironmentDay, Mechanism, PricingRule, Split};
use crate::error::{Error, Result};

const BIN_MAGIC: &[u8; 8] = b"ADVBDAY1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayFormat {
    #[default]
    Jsonl,
    Binary,
}

impl DayFormat {
    fn extension(self) -> &'static str {
        match self {
            DayFormat::Jsonl => "jsonl",
            DayFormat::Binary => "bin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayHeader {
    pub day_id: u32,
    pub split: Split,
    pub mechanism: Mechanism,
    pub budget: f64,
    pub roi_target: f64,
    pub slots: usize,
    pub pricing: PricingRule,
    pub slot_boundaries: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Header(DayHeader),
    Auction(AuctionRecord),
}

fn header_of(day: &EnvironmentDay) -> DayHeader {
    DayHeader {
        day_id: day.day_id,
        split: day.split,
        mechanism: day.mechanism,
        budget: day.budget,
        roi_target: day.roi_target,
        slots: day.slots(),
        pricing: day.pricing.clone(),
        slot_boundaries: day.slot_boundaries.clone(),
    }
}

fn assemble(path: &Path, header: DayHeader, auctions: Vec<AuctionRecord>) -> Result<EnvironmentDay> {
    if header.slots + 1 != header.slot_boundaries.len() {
        return Err(Error::format(path, "header slot count disagrees with slot boundaries"));
    }
    let day = EnvironmentDay {
        day_id: header.day_id,
        split: header.split,
        mechanism: header.mechanism,
        budget: header.budget,
        roi_target: header.roi_target,
        pricing: header.pricing,
        slot_boundaries: header.slot_boundaries,
        auctions,
    };
    day.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(day)
}

pub fn day_file_name(day_id: u32, format: DayFormat) -> String {
    format!("day_{day_id:04}.{}", format.extension())
}

pub fn write_day(path: &Path, day: &EnvironmentDay, format: DayFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        DayFormat::Jsonl => {
            let line = |l: &Line, w: &mut BufWriter<fs::File>| -> Result<()> {
                serde_json::to_writer(&mut *w, l).map_err(|e| Error::format(path, e.to_string()))?;
                w.write_all(b"\n").map_err(io)
            };
            line(&Line::Header(header_of(day)), &mut w)?;
            for a in &day.auctions {
                line(&Line::Auction(*a), &mut w)?;
            }
        }
        DayFormat::Binary => {
            let header = serde_json::to_vec(&header_of(day)).map_err(|e| Error::format(path, e.to_string()))?;
            w.write_all(BIN_MAGIC).map_err(io)?;
            w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&header).map_err(io)?;
            w.write_all(&(day.auctions.len() as u64).to_le_bytes()).map_err(io)?;
            for a in &day.auctions {
                w.write_all(&a.index.to_le_bytes()).map_err(io)?;
            }
            for col in [
                |a: &AuctionRecord| a.utility_estimate,
                |a: &AuctionRecord| a.realized_utility,
                |a: &AuctionRecord| a.market_price,
            ] {
                for a in &day.auctions {
                    w.write_all(&col(a).to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_day(path: &Path) -> Result<EnvironmentDay> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_jsonl(path),
        Some("bin") => read_binary(path),
        _ => Err(Error::format(path, "unknown day file extension")),
    }
}

fn read_jsonl(path: &Path) -> Result<EnvironmentDay> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty day file"))?
        .map_err(|e| Error::io(path, e))?;
    let header = match serde_json::from_str::<Line>(&first) {
        Ok(Line::Header(h)) => h,
        Ok(Line::Auction(_)) => return Err(Error::format(path, "first record must be the header")),
        Err(e) => return Err(Error::format(path, format!("corrupt header: {e}"))),
    };
    let mut auctions = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<Line>(&line) {
            Ok(Line::Auction(a)) => auctions.push(a),
            Ok(Line::Header(_)) => return Err(Error::format(path, format!("duplicate header at record {}", n + 2))),
            Err(e) => return Err(Error::format(path, format!("record {}: {e}", n + 2))),
        }
    }
    assemble(path, header, auctions)
}

fn read_binary(path: &Path) -> Result<EnvironmentDay> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(8)? != BIN_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let header_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    let header: DayHeader = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| Error::format(path, format!("corrupt header: {e}")))?;
    let n = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let index: Vec<u32> = cur.take(4 * n)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let mut column = || -> Result<Vec<f64>> {
        Ok(cur.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let u = column()?;
    let r = column()?;
    let m = column()?;
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    let auctions = (0..n)
        .map(|i| AuctionRecord { index: index[i], utility_estimate: u[i], realized_utility: r[i], market_price: m[i] })
        .collect();
    assemble(path, header, auctions)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn save_dataset(dir: &Path, days: &[EnvironmentDay], format: DayFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    days.iter()
        .map(|d| {
            let path = dir.join(day_file_name(d.day_id, format));
            write_day(&path, d, format)?;
            Ok(path)
        })
        .collect()
}

/// Load every day file in `dir`, ordered by day id. Text files take
/// precedence when both forms of a day are present.
pub fn load_dataset(dir: &Path) -> Result<Vec<EnvironmentDay>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("day_") && (name.ends_with(".jsonl") || name.ends_with(".bin")) {
            paths.push(path);
        }
    }
    paths.sort();
    paths.dedup_by(|b, a| a.file_stem() == b.file_stem());
    let mut days = paths.iter().map(|p| read_day(p)).collect::<Result<Vec<_>>>()?;
    days.sort_by_key(|d| d.day_id);
    Ok(days)
}
