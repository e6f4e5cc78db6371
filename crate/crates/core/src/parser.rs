//! Readers for CAN traffic logs.
//!
//! Three layouts are understood:
//!
//! - **canonical**: `timestamp,can_id,dlc,payload,label` CSV with a header,
//!   hexadecimal ID, the payload as one hex string (embedded whitespace is
//!   ignored) and an optional integer label. This is also what the traffic
//!   generator writes.
//! - **car-hacking**: headerless CSV rows
//!   `timestamp,id,dlc,b0,...,b{dlc-1},flag` where the number of byte
//!   columns follows the DLC and `flag` is a token such as `R` or `T`.
//! - **can-ids**: whitespace separated text lines of the form
//!   `Timestamp: 1479121434.850202 ID: 0350 000 DLC: 8 05 28 84 66 6d 00 00 a2`
//!   with an optional trailing flag token.
//!
//! Dataset flag tokens are mapped to class codes through a [`LabelManifest`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frame::{CanFrame, ClassLabel, MAX_STANDARD_ID};

pub const CANONICAL_HEADER: &str = "timestamp,can_id,dlc,payload,label";

/// Out-of-order timestamps within this many seconds are tolerated.
pub const DEFAULT_ORDER_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Canonical,
    CarHacking,
    CanIds,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "canonical" => Ok(DatasetFormat::Canonical),
            "car_hacking" | "carhacking" => Ok(DatasetFormat::CarHacking),
            "can_ids" | "canids" => Ok(DatasetFormat::CanIds),
            other => Err(Error::Config(format!(
                "unknown dataset format `{other}` (expected canonical, car-hacking or can-ids)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Keep frames in file order even when timestamps go backwards.
    pub allow_unordered: bool,
    pub slack: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            allow_unordered: false,
            slack: DEFAULT_ORDER_SLACK,
        }
    }
}

struct OrderCheck {
    latest: f64,
    opts: ParseOptions,
}

impl OrderCheck {
    fn new(opts: ParseOptions) -> Self {
        OrderCheck {
            latest: f64::NEG_INFINITY,
            opts,
        }
    }

    fn check(&mut self, line: u64, timestamp: f64) -> Result<()> {
        let behind = self.latest - timestamp;
        if behind > self.opts.slack && !self.opts.allow_unordered {
            return Err(Error::Unordered {
                line,
                timestamp,
                behind,
                slack: self.opts.slack,
            });
        }
        self.latest = self.latest.max(timestamp);
        Ok(())
    }
}

fn parse_timestamp(line: u64, s: &str) -> Result<f64> {
    let ts: f64 = s
        .parse()
        .map_err(|_| Error::parse(line, "timestamp", format!("`{s}` is not a number")))?;
    if !ts.is_finite() || ts < 0.0 {
        return Err(Error::parse(line, "timestamp", format!("`{s}` must be finite and >= 0")));
    }
    Ok(ts)
}

/// Returns the identifier and whether it is an extended (29-bit) one.
fn parse_can_id(line: u64, s: &str) -> Result<(u32, bool)> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::parse(line, "can_id", format!("`{s}` is not hexadecimal")));
    }
    let id = u32::from_str_radix(s, 16)
        .map_err(|e| Error::parse(line, "can_id", format!("`{s}`: {e}")))?;
    let extended = s.len() >= 8 || id > MAX_STANDARD_ID;
    if id >= 1 << 29 {
        return Err(Error::parse(line, "can_id", format!("`{s}` exceeds 29 bits")));
    }
    Ok((id, extended))
}

fn parse_dlc(line: u64, s: &str) -> Result<u8> {
    match s.parse::<u8>() {
        Ok(d) if d <= 8 => Ok(d),
        _ => Err(Error::parse(line, "dlc", format!("`{s}` is not an integer in 0..=8"))),
    }
}

fn hex_nibble(c: u8) -> Option<u8> {
    (c as char).to_digit(16).map(|d| d as u8)
}

fn parse_hex_byte(line: u64, s: &str) -> Result<u8> {
    match s.as_bytes() {
        [hi, lo] => match (hex_nibble(*hi), hex_nibble(*lo)) {
            (Some(h), Some(l)) => Ok(h << 4 | l),
            _ => Err(Error::parse(line, "payload", format!("`{s}` is not a hex byte"))),
        },
        _ => Err(Error::parse(line, "payload", format!("`{s}` is not a hex byte"))),
    }
}

fn parse_hex_payload(line: u64, s: &str, dlc: u8) -> Result<Vec<u8>> {
    let digits: Vec<u8> = s.bytes().filter(|b| !b.is_ascii_whitespace()).collect();
    if digits.len() != 2 * dlc as usize {
        return Err(Error::parse(
            line,
            "payload",
            format!("expected {} hex digits for dlc {dlc}, found {}", 2 * dlc, digits.len()),
        ));
    }
    digits
        .chunks_exact(2)
        .map(|pair| match (hex_nibble(pair[0]), hex_nibble(pair[1])) {
            (Some(h), Some(l)) => Ok(h << 4 | l),
            _ => Err(Error::parse(line, "payload", format!("`{s}` contains non-hex characters"))),
        })
        .collect()
}

fn build_frame(line: u64, ts: f64, id: (u32, bool), payload: &[u8]) -> Result<CanFrame> {
    CanFrame::with_format(ts, id.0, id.1, payload).map_err(|e| Error::parse(line, "can_id", e.to_string()))
}

/// Streaming reader over a canonical CSV source.
pub struct CanonicalReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    order: OrderCheck,
    header_checked: bool,
}

impl<R: Read> CanonicalReader<R> {
    pub fn new(source: R, opts: ParseOptions) -> Self {
        let reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        CanonicalReader {
            records: reader.into_records(),
            order: OrderCheck::new(opts),
            header_checked: false,
        }
    }

    fn parse_record(&mut self, record: &csv::StringRecord) -> Result<CanFrame> {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 4 || record.len() > 5 {
            return Err(Error::parse(
                line,
                "row",
                format!("expected 4 or 5 fields, found {}", record.len()),
            ));
        }
        let ts = parse_timestamp(line, &record[0])?;
        let id = parse_can_id(line, &record[1])?;
        let dlc = parse_dlc(line, &record[2])?;
        let payload = parse_hex_payload(line, &record[3], dlc)?;
        let label = match record.get(4) {
            None | Some("") => None,
            Some(s) => Some(ClassLabel(s.parse().map_err(|_| {
                Error::parse(line, "label", format!("`{s}` is not a class code"))
            })?)),
        };
        self.order.check(line, ts)?;
        let mut frame = build_frame(line, ts, id, &payload)?;
        frame.label = label;
        Ok(frame)
    }
}

impl<R: Read> Iterator for CanonicalReader<R> {
    type Item = Result<CanFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let record = match self.records.next()? {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Some(Err(Error::parse(line, "row", e.to_string())));
                }
            };
            if record.iter().all(str::is_empty) {
                continue;
            }
            if !self.header_checked {
                self.header_checked = true;
                let fields: Vec<&str> = record.iter().collect();
                if fields.join(",") != CANONICAL_HEADER {
                    let line = record.position().map_or(1, |p| p.line());
                    return Some(Err(Error::parse(
                        line,
                        "header",
                        format!("expected `{CANONICAL_HEADER}`, found `{}`", fields.join(",")),
                    )));
                }
                continue;
            }
            return Some(self.parse_record(&record));
        }
    }
}

/// Parses a canonical CSV log into frames in file order.
pub fn parse_canonical<R: Read>(source: R, opts: ParseOptions) -> Result<Vec<CanFrame>> {
    CanonicalReader::new(source, opts).collect()
}

/// Parses any supported layout. `labels` is ignored for canonical input.
pub fn parse_dataset<R: Read>(
    source: R,
    format: DatasetFormat,
    labels: &LabelRules,
    opts: ParseOptions,
) -> Result<Vec<CanFrame>> {
    match format {
        DatasetFormat::Canonical => parse_canonical(source, opts),
        DatasetFormat::CarHacking => parse_car_hacking(source, labels, opts),
        DatasetFormat::CanIds => parse_can_ids(source, labels, opts),
    }
}

fn parse_car_hacking<R: Read>(source: R, labels: &LabelRules, opts: ParseOptions) -> Result<Vec<CanFrame>> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut order = OrderCheck::new(opts);
    let mut frames = Vec::new();
    for (i, record) in reader.into_records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(line, "row", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        // Trailing commas produce empty fields; they carry nothing.
        let fields: Vec<&str> = {
            let mut f: Vec<&str> = record.iter().collect();
            while f.last() == Some(&"") {
                f.pop();
            }
            f
        };
        if fields.is_empty() {
            continue;
        }
        // Some mirrors ship a header row.
        if i == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::parse(line, "row", "truncated row: missing id or dlc"));
        }
        let ts = parse_timestamp(line, fields[0])?;
        let id = parse_can_id(line, fields[1])?;
        let dlc = parse_dlc(line, fields[2])? as usize;
        if fields.len() < 3 + dlc {
            return Err(Error::parse(
                line,
                "payload",
                format!("truncated row: dlc {dlc} but only {} data bytes", fields.len() - 3),
            ));
        }
        let payload = fields[3..3 + dlc]
            .iter()
            .map(|b| parse_hex_byte(line, b))
            .collect::<Result<Vec<u8>>>()?;
        let flag = match fields.get(3 + dlc) {
            Some(f) => Some(*f),
            None => return Err(Error::parse(line, "flag", "truncated row: missing flag column")),
        };
        order.check(line, ts)?;
        let label = labels.resolve(flag, id.0, line)?;
        frames.push(build_frame(line, ts, id, &payload)?.labeled(label));
    }
    Ok(frames)
}

fn parse_can_ids<R: Read>(source: R, labels: &LabelRules, opts: ParseOptions) -> Result<Vec<CanFrame>> {
    let mut order = OrderCheck::new(opts);
    let mut frames = Vec::new();
    for (i, text) in BufReader::new(source).lines().enumerate() {
        let line = i as u64 + 1;
        let text = text?;
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 4 || tokens[0] != "Timestamp:" || tokens[2] != "ID:" {
            return Err(Error::parse(line, "row", "expected `Timestamp: <t> ID: <id> ... DLC: <n> ...`"));
        }
        let ts = parse_timestamp(line, tokens[1])?;
        let id = parse_can_id(line, tokens[3])?;
        let dlc_at = tokens
            .iter()
            .position(|t| *t == "DLC:")
            .ok_or_else(|| Error::parse(line, "dlc", "truncated row: missing `DLC:`"))?;
        let dlc_text = tokens
            .get(dlc_at + 1)
            .ok_or_else(|| Error::parse(line, "dlc", "truncated row: missing DLC value"))?;
        let dlc = parse_dlc(line, dlc_text)? as usize;
        let data_at = dlc_at + 2;
        if tokens.len() < data_at + dlc {
            return Err(Error::parse(
                line,
                "payload",
                format!("truncated row: dlc {dlc} but only {} data bytes", tokens.len() - data_at),
            ));
        }
        let payload = tokens[data_at..data_at + dlc]
            .iter()
            .map(|b| parse_hex_byte(line, b))
            .collect::<Result<Vec<u8>>>()?;
        let flag = tokens.get(data_at + dlc).copied();
        order.check(line, ts)?;
        let label = labels.resolve(flag, id.0, line)?;
        frames.push(build_frame(line, ts, id, &payload)?.labeled(label));
    }
    Ok(frames)
}

/// Formats one frame as a canonical CSV row (without line terminator).
pub fn canonical_row(frame: &CanFrame) -> String {
    let mut row = String::with_capacity(48);
    let _ = write!(row, "{},", frame.timestamp);
    if frame.extended {
        let _ = write!(row, "{:08X},", frame.can_id);
    } else {
        let _ = write!(row, "{:03X},", frame.can_id);
    }
    let _ = write!(row, "{},", frame.dlc());
    for b in frame.payload() {
        let _ = write!(row, "{b:02x}");
    }
    row.push(',');
    if let Some(label) = frame.label {
        let _ = write!(row, "{label}");
    }
    row
}

/// Writes frames as canonical CSV, one row at a time.
pub fn write_canonical<'a, W, I>(mut writer: W, frames: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a CanFrame>,
{
    writeln!(writer, "{CANONICAL_HEADER}")?;
    for frame in frames {
        writeln!(writer, "{}", canonical_row(frame))?;
    }
    writer.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum LabelKey {
    Token(String),
    /// Rows carrying no flag token.
    Unflagged,
    CanId(u32),
}

/// Flag-token rules effective for one capture file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelRules {
    tokens: BTreeMap<String, ClassLabel>,
    by_id: BTreeMap<u32, ClassLabel>,
    unflagged: Option<ClassLabel>,
}

impl LabelRules {
    fn insert(&mut self, key: LabelKey, label: ClassLabel) {
        match key {
            LabelKey::Token(t) => {
                self.tokens.insert(t, label);
            }
            LabelKey::Unflagged => self.unflagged = Some(label),
            LabelKey::CanId(id) => {
                self.by_id.insert(id, label);
            }
        }
    }

    /// Flagged rows use their token. Unflagged rows use an `id:` rule when
    /// one matches the frame's ID, then the `*` rule.
    pub fn resolve(&self, flag: Option<&str>, can_id: u32, line: u64) -> Result<ClassLabel> {
        match flag {
            Some(token) => self.tokens.get(token).copied().ok_or_else(|| Error::UnknownLabel {
                line,
                token: token.to_string(),
                known: self.known_tokens(),
            }),
            None => self
                .by_id
                .get(&can_id)
                .copied()
                .or(self.unflagged)
                .ok_or_else(|| Error::UnknownLabel {
                    line,
                    token: "<none>".to_string(),
                    known: self.known_tokens(),
                }),
        }
    }

    fn known_tokens(&self) -> String {
        let mut known: Vec<String> = self.tokens.keys().cloned().collect();
        if self.unflagged.is_some() {
            known.push("*".into());
        }
        known.extend(self.by_id.keys().map(|id| format!("id:{id:X}")));
        known.join(", ")
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        self.tokens
            .values()
            .chain(self.by_id.values())
            .chain(self.unflagged.iter())
            .copied()
    }
}

/// Maps dataset label tokens to class codes.
///
/// ```text
/// # applies to every file
/// R=0:benign
/// *=0:benign
/// [DoS_dataset.csv]
/// T=1:DoS
/// id:0000=1:DoS
/// ```
///
/// Lines before the first `[file]` header apply to all files; a section
/// adds or overrides rules for the named capture file. Codes across the
/// whole manifest must be dense (`0..=C`), with code 0 named `benign`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelManifest {
    names: Vec<String>,
    global: LabelRules,
    sections: BTreeMap<String, LabelRules>,
}

impl LabelManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: BTreeMap<u16, String> = BTreeMap::new();
        let mut global = LabelRules::default();
        let mut sections: BTreeMap<String, LabelRules> = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i as u64 + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                sections.entry(name.clone()).or_default();
                section = Some(name);
                continue;
            }
            let bad = |why: &str| Error::parse(line, "label manifest", format!("`{content}`: {why}"));
            let (key, value) = content.split_once('=').ok_or_else(|| bad("expected KEY=CODE:NAME"))?;
            let (code, name) = value.split_once(':').ok_or_else(|| bad("expected KEY=CODE:NAME"))?;
            let code: u16 = code.trim().parse().map_err(|_| bad("code is not an integer"))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(bad("empty class name"));
            }
            let key = key.trim();
            let key = if key == "*" {
                LabelKey::Unflagged
            } else if let Some(hex) = key.strip_prefix("id:") {
                let id = u32::from_str_radix(hex.trim(), 16).map_err(|_| bad("id rule is not hexadecimal"))?;
                LabelKey::CanId(id)
            } else if key.is_empty() {
                return Err(bad("empty token"));
            } else {
                LabelKey::Token(key.to_string())
            };
            match names.get(&code) {
                Some(existing) if existing != name => {
                    return Err(bad(&format!("code {code} already named `{existing}`")));
                }
                _ => {
                    names.insert(code, name.to_string());
                }
            }
            let rules = match &section {
                Some(s) => sections.get_mut(s).expect("section registered"),
                None => &mut global,
            };
            rules.insert(key, ClassLabel(code));
        }
        if names.is_empty() {
            return Err(Error::Config("label manifest defines no classes".into()));
        }
        match names.get(&0) {
            Some(n) if n.eq_ignore_ascii_case("benign") => {}
            Some(n) => return Err(Error::Config(format!("class code 0 must be `benign`, found `{n}`"))),
            None => return Err(Error::Config("label manifest has no benign class (code 0)".into())),
        }
        let max = *names.keys().last().expect("non-empty");
        if names.len() != max as usize + 1 {
            return Err(Error::Config(format!(
                "class codes must be dense 0..={max}; found {:?}",
                names.keys().collect::<Vec<_>>()
            )));
        }
        Ok(LabelManifest {
            names: names.into_values().collect(),
            global,
            sections,
        })
    }

    /// Rules for a capture file: the global rules plus that file's section.
    pub fn rules_for(&self, file_name: Option<&str>) -> LabelRules {
        let mut rules = self.global.clone();
        if let Some(section) = file_name.and_then(|f| self.sections.get(f)) {
            for (t, l) in &section.tokens {
                rules.tokens.insert(t.clone(), *l);
            }
            for (id, l) in &section.by_id {
                rules.by_id.insert(*id, *l);
            }
            if section.unflagged.is_some() {
                rules.unflagged = section.unflagged;
            }
        }
        rules
    }

    /// Class names indexed by code.
    pub fn class_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical(body: &str) -> Result<Vec<CanFrame>> {
        parse_canonical(format!("{CANONICAL_HEADER}\n{body}").as_bytes(), ParseOptions::default())
    }

    #[test]
    fn worked_example_row_with_spaced_payload() {
        let frames = canonical("1478198376.389427,0316,8,05288466 6d0000a2\n").unwrap();
        assert_eq!(frames.len(), 1);
        let f = &frames[0];
        assert_eq!(f.timestamp, 1478198376.389427);
        assert_eq!(f.can_id, 0x316);
        assert_eq!(f.dlc(), 8);
        assert_eq!(f.payload(), &[0x05, 0x28, 0x84, 0x66, 0x6d, 0x00, 0x00, 0xa2]);
        assert_eq!(f.label, None);
    }

    #[test]
    fn empty_payload_row() {
        let frames = canonical("0.0,000,0,,0\n").unwrap();
        assert_eq!(frames[0].timestamp, 0.0);
        assert_eq!(frames[0].can_id, 0);
        assert!(frames[0].payload().is_empty());
        assert_eq!(frames[0].label, Some(ClassLabel::BENIGN));
    }

    #[test]
    fn non_hex_payload_reports_line_and_field() {
        let err = canonical("0.5,100,1,ff,\n1.0,7FF,8,00000000000000ZZ,1\n").unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "payload");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_ids_lengths_and_headers() {
        assert!(matches!(canonical("1.0,XYZ,0,,\n"), Err(Error::Parse { field: "can_id", .. })));
        assert!(matches!(canonical("1.0,100,2,ff,\n"), Err(Error::Parse { field: "payload", .. })));
        assert!(matches!(canonical("1.0,100,9,,\n"), Err(Error::Parse { field: "dlc", .. })));
        assert!(matches!(canonical("1.0,100,0,,x\n"), Err(Error::Parse { field: "label", .. })));
        assert!(matches!(
            parse_canonical("ts,id\n".as_bytes(), ParseOptions::default()),
            Err(Error::Parse { field: "header", .. })
        ));
    }

    #[test]
    fn crlf_and_blank_lines_are_accepted() {
        let text = format!("{CANONICAL_HEADER}\r\n1.0,100,1,ab,\r\n\r\n2.0,101,0,,2\r\n");
        let frames = parse_canonical(text.as_bytes(), ParseOptions::default()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].label, Some(ClassLabel(2)));
    }

    #[test]
    fn monotonicity_slack() {
        // 0.5 ms backwards is jitter, 5 ms is an error unless allowed.
        assert!(canonical("1.0000,100,0,,\n0.9995,101,0,,\n").is_ok());
        let err = canonical("1.000,100,0,,\n0.995,101,0,,\n").unwrap_err();
        assert!(matches!(err, Error::Unordered { line: 3, .. }));
        let text = format!("{CANONICAL_HEADER}\n1.000,100,0,,\n0.995,101,0,,\n");
        let opts = ParseOptions {
            allow_unordered: true,
            ..Default::default()
        };
        let frames = parse_canonical(text.as_bytes(), opts).unwrap();
        assert_eq!(frames[1].timestamp, 0.995);
    }

    #[test]
    fn extended_ids_survive_a_round_trip() {
        let frames = vec![
            CanFrame::new(0.25, 0x1ABC_DE01, &[1, 2]).unwrap(),
            CanFrame::with_format(0.5, 0x10, true, &[]).unwrap().labeled(ClassLabel(3)),
            CanFrame::new(0.75, 0x7ff, &[9; 8]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_canonical(&mut buf, &frames).unwrap();
        let back = parse_canonical(buf.as_slice(), ParseOptions::default()).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn empty_stream_writes_header_only() {
        let mut buf = Vec::new();
        write_canonical(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CANONICAL_HEADER}\n"));
    }

    fn car_hacking_rules() -> LabelRules {
        LabelManifest::parse("R=0:benign\n[DoS_dataset.csv]\nT=1:DoS\n")
            .unwrap()
            .rules_for(Some("DoS_dataset.csv"))
    }

    #[test]
    fn car_hacking_rows() {
        let text = "1478198376.389427,0316,8,05,28,84,66,6d,00,00,a2,R\n\
                    1478198376.389636,0000,8,00,00,00,00,00,00,00,00,T\n\
                    1478198376.390000,02b0,5,ff,7f,00,05,49,R\n";
        let frames = parse_dataset(text.as_bytes(), DatasetFormat::CarHacking, &car_hacking_rules(), ParseOptions::default())
            .unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].label, Some(ClassLabel::BENIGN));
        assert_eq!(frames[0].payload(), &[0x05, 0x28, 0x84, 0x66, 0x6d, 0x00, 0x00, 0xa2]);
        assert_eq!(frames[1].label, Some(ClassLabel(1)));
        assert_eq!(frames[2].payload(), &[0xff, 0x7f, 0x00, 0x05, 0x49]);
    }

    #[test]
    fn car_hacking_errors() {
        let rules = car_hacking_rules();
        let parse = |t: &str| parse_dataset(t.as_bytes(), DatasetFormat::CarHacking, &rules, ParseOptions::default());
        match parse("1.0,0316,8,05,28,84,66,6d,00,00,a2,X\n").unwrap_err() {
            Error::UnknownLabel { token, known, .. } => {
                assert_eq!(token, "X");
                assert!(known.contains('R') && known.contains('T'));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(parse("1.0,0316,8,05,28\n"), Err(Error::Parse { field: "payload", .. })));
        assert!(matches!(parse("1.0,0316,2,05,28\n"), Err(Error::Parse { field: "flag", .. })));
    }

    #[test]
    fn can_ids_rows() {
        let manifest = LabelManifest::parse("*=0:benign\nid:0000=1:DoS\n").unwrap();
        let text = "Timestamp: 1479121434.850202        ID: 0350    000    DLC: 8    05 28 84 66 6d 00 00 a2\n\
                    Timestamp: 1479121434.850423        ID: 0000    000    DLC: 8    00 00 00 00 00 00 00 00\n\
                    Timestamp: 1479121434.851000        ID: 02c0    000    DLC: 2    14 00\n";
        let frames =
            parse_dataset(text.as_bytes(), DatasetFormat::CanIds, &manifest.rules_for(None), ParseOptions::default())
                .unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].can_id, 0x350);
        assert_eq!(frames[0].label, Some(ClassLabel::BENIGN));
        assert_eq!(frames[1].label, Some(ClassLabel(1)));
        assert_eq!(frames[2].payload(), &[0x14, 0x00]);

        let truncated = "Timestamp: 1.0 ID: 0350 000 DLC: 8 05 28\n";
        assert!(matches!(
            parse_dataset(truncated.as_bytes(), DatasetFormat::CanIds, &manifest.rules_for(None), ParseOptions::default()),
            Err(Error::Parse { field: "payload", .. })
        ));
    }

    #[test]
    fn canonical_adapter_is_identity() {
        let text = format!("{CANONICAL_HEADER}\n0.1,316,2,abcd,1\n0.2,18F,0,,\n");
        let a = parse_canonical(text.as_bytes(), ParseOptions::default()).unwrap();
        let b = parse_dataset(text.as_bytes(), DatasetFormat::Canonical, &LabelRules::default(), ParseOptions::default())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_validation() {
        assert!(LabelManifest::parse("R=0:benign\nT=2:DoS\n").is_err());
        assert!(LabelManifest::parse("T=1:DoS\n").is_err());
        assert!(LabelManifest::parse("R=0:normal\n").is_err());
        assert!(LabelManifest::parse("R=0:benign\nT=1:DoS\nU=1:Fuzzy\n").is_err());
        let m = LabelManifest::parse(
            "# Car-Hacking\nR=0:benign\n[DoS_dataset.csv]\nT=1:DoS\n[gear_dataset.csv]\nT=2:gear\n",
        )
        .unwrap();
        assert_eq!(m.class_names(), &["benign", "DoS", "gear"]);
        assert_eq!(m.rules_for(Some("gear_dataset.csv")).resolve(Some("T"), 0x43f, 1).unwrap(), ClassLabel(2));
        assert!(m.rules_for(None).resolve(Some("T"), 0x43f, 1).is_err());
    }

    #[test]
    fn format_names() {
        assert_eq!("car-hacking".parse::<DatasetFormat>().unwrap(), DatasetFormat::CarHacking);
        assert_eq!("CAN_IDS".parse::<DatasetFormat>().unwrap(), DatasetFormat::CanIds);
        assert!("pcap".parse::<DatasetFormat>().is_err());
    }
}
