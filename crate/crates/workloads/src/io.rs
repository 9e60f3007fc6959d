//! Event files: one `ts,type,args...` record per line, `#` header lines.
//!
//! ```text
//! ts,deposit,account,amount
//! ts,transfer,from,to,amount
//! ts,grep,group,abort,width,keys...
//! ts,window,range,keys...
//! ts,nondet,abort,pick,width,candidates...
//! ```

use std::io::{Read, Write};

use tsp_core::{Key, Timestamp};

use crate::{Event, Payload, WorkloadError};

pub fn write_events<W: Write>(mut w: W, header: &[String], events: &[Event]) -> Result<(), WorkloadError> {
    for h in header {
        writeln!(w, "# {h}")?;
    }
    let mut out = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(w);
    for e in events {
        let mut rec = vec![e.ts.0.to_string()];
        match &e.payload {
            Payload::Deposit { account, amount } => {
                rec.extend(["deposit".into(), account.0.to_string(), amount.to_string()]);
            }
            Payload::Transfer { from, to, amount } => {
                rec.extend(["transfer".into(), from.0.to_string(), to.0.to_string(), amount.to_string()]);
            }
            Payload::Grep { ops, abort } => {
                let width = ops.first().map_or(0, |o| o.len());
                rec.extend([
                    "grep".into(),
                    e.group.to_string(),
                    u8::from(*abort).to_string(),
                    width.to_string(),
                ]);
                rec.extend(ops.iter().flatten().map(|k| k.0.to_string()));
            }
            Payload::WindowSum { keys, range } => {
                rec.extend(["window".into(), range.to_string()]);
                rec.extend(keys.iter().map(|k| k.0.to_string()));
            }
            Payload::NondetGrep {
                candidates,
                pick,
                width,
                abort,
            } => {
                rec.extend([
                    "nondet".into(),
                    u8::from(*abort).to_string(),
                    pick.to_string(),
                    width.to_string(),
                ]);
                rec.extend(candidates.iter().map(|k| k.0.to_string()));
            }
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Header lines (without `# `) and events, in file order.
pub fn read_events<R: Read>(r: R) -> Result<(Vec<String>, Vec<Event>), WorkloadError> {
    let mut text = String::new();
    std::io::BufReader::new(r).read_to_string(&mut text)?;
    let header = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(|h| h.trim().to_string())
        .collect();
    let mut rd = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut events = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let err = |msg: &str| WorkloadError::Parse {
            line,
            msg: msg.to_string(),
        };
        let num = |j: usize| -> Result<i64, WorkloadError> {
            rec.get(j)
                .ok_or_else(|| err("missing field"))?
                .trim()
                .parse::<i64>()
                .map_err(|_| err("not a number"))
        };
        let key = |j: usize| num(j).map(|x| Key(x as u64));
        let keys_from = |j: usize| (j..rec.len()).map(key).collect::<Result<Vec<Key>, _>>();
        let ts = num(0)? as u64;
        let mut group = 0;
        let payload = match rec.get(1).map(str::trim) {
            Some("deposit") => Payload::Deposit {
                account: key(2)?,
                amount: num(3)?,
            },
            Some("transfer") => Payload::Transfer {
                from: key(2)?,
                to: key(3)?,
                amount: num(4)?,
            },
            Some("grep") => {
                group = num(2)? as u32;
                let width = num(4)? as usize;
                let keys = keys_from(5)?;
                if width == 0 || keys.len() % width != 0 {
                    return Err(err("key count is not a multiple of the width"));
                }
                Payload::Grep {
                    ops: keys.chunks(width).map(<[Key]>::to_vec).collect(),
                    abort: num(3)? != 0,
                }
            }
            Some("window") => Payload::WindowSum {
                range: num(2)? as u64,
                keys: keys_from(3)?,
            },
            Some("nondet") => Payload::NondetGrep {
                abort: num(2)? != 0,
                pick: num(3)?,
                width: num(4)? as usize,
                candidates: keys_from(5)?,
            },
            _ => return Err(err("unknown event type")),
        };
        events.push(Event {
            event_id: ts.saturating_sub(1),
            ts: Timestamp(ts),
            arrival_index: events.len(),
            group,
            payload,
        });
    }
    Ok((header, events))
}
