//! Delimited-text readers and writers for records, towers, market shares and
//! projections.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crowdcdr_core::model::{
    CdrEvent, Day, EventDefect, EventKind, PersonId, StateCode, StateProfile, StateTable, StateTableError, StudyWindow,
    TowerId, TowerSite,
};
use serde::{Deserialize, Serialize};

pub const CDR_FILE: &str = "cdr.csv";
pub const TOWERS_FILE: &str = "towers.csv";
pub const MARKET_SHARES_FILE: &str = "market_shares.csv";
pub const PROJECTIONS_FILE: &str = "projections.csv";

/// Fraction of unparseable data rows tolerated before the file is refused.
pub const DEFAULT_PARSE_TOLERANCE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: missing required column `{column}`", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("{}: {malformed} of {rows} rows unparseable, above tolerance {tolerance}", path.display())]
    Tolerance { path: PathBuf, malformed: u64, rows: u64, tolerance: f64 },
    #[error("{}: line {line}: {message}", path.display())]
    Row { path: PathBuf, line: u64, message: String },
    #[error("{}: tower {id} listed more than once", path.display())]
    DuplicateTower { path: PathBuf, id: TowerId },
    #[error("{}: {source}", path.display())]
    States { path: PathBuf, source: StateTableError },
}

impl IngestError {
    pub fn path(&self) -> &Path {
        match self {
            IngestError::Io { path, .. }
            | IngestError::Csv { path, .. }
            | IngestError::MissingColumn { path, .. }
            | IngestError::Tolerance { path, .. }
            | IngestError::Row { path, .. }
            | IngestError::DuplicateTower { path, .. }
            | IngestError::States { path, .. } => path,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|source| IngestError::Io { path: path.to_owned(), source })
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

/// Header names for each record field. Defaults to the canonical names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdrSchema {
    pub timestamp: String,
    pub caller_id: String,
    pub callee_id: String,
    pub kind: String,
    pub duration: String,
    pub tower_id: String,
    pub caller_state: String,
    pub callee_state: String,
    pub caller_is_customer: String,
    pub callee_is_customer: String,
}

impl Default for CdrSchema {
    fn default() -> Self {
        CdrSchema {
            timestamp: "timestamp".into(),
            caller_id: "caller_id".into(),
            callee_id: "callee_id".into(),
            kind: "kind".into(),
            duration: "duration".into(),
            tower_id: "tower_id".into(),
            caller_state: "caller_state".into(),
            callee_state: "callee_state".into(),
            caller_is_customer: "caller_is_customer".into(),
            callee_is_customer: "callee_is_customer".into(),
        }
    }
}

impl CdrSchema {
    fn columns(&self) -> [&str; 10] {
        [
            &self.timestamp,
            &self.caller_id,
            &self.callee_id,
            &self.kind,
            &self.duration,
            &self.tower_id,
            &self.caller_state,
            &self.callee_state,
            &self.caller_is_customer,
            &self.callee_is_customer,
        ]
    }
}

/// Row counts from one pass over a record file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub rows: u64,
    pub parsed: u64,
    pub malformed: u64,
    /// Parsed rows that break a record invariant.
    pub rejected: BTreeMap<EventDefect, u64>,
}

impl ParseStats {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    pub window: StudyWindow,
    pub tolerance: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { window: StudyWindow::default(), tolerance: DEFAULT_PARSE_TOLERANCE }
    }
}

fn parse_state(s: &str) -> Result<Option<StateCode>, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("unknown") {
        return Ok(None);
    }
    let code: u8 = s.parse().map_err(|_| format!("bad state `{s}`"))?;
    StateCode::new(code).map(Some).ok_or_else(|| format!("state {code} outside 1..=23"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(format!("bad boolean `{other}`")),
    }
}

fn parse_kind(s: &str) -> Result<EventKind, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("call") {
        Ok(EventKind::Call)
    } else if s.eq_ignore_ascii_case("text") || s.eq_ignore_ascii_case("sms") {
        Ok(EventKind::Text)
    } else {
        Err(format!("bad kind `{s}`"))
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("bad {what} `{}`", s.trim()))
}

/// Streaming record reader. Yields valid records in file order; malformed
/// and invalid rows are counted in [`CdrReader::stats`].
pub struct CdrReader<R: Read> {
    path: PathBuf,
    reader: csv::Reader<R>,
    index: [usize; 10],
    opts: ParseOptions,
    stats: ParseStats,
    record: csv::StringRecord,
}

impl CdrReader<BufReader<File>> {
    pub fn open(path: &Path, schema: &CdrSchema, opts: ParseOptions) -> Result<Self, IngestError> {
        CdrReader::new(open(path)?, path, schema, opts)
    }
}

impl<R: Read> CdrReader<R> {
    /// `path` only labels errors.
    pub fn new(source: R, path: &Path, schema: &CdrSchema, opts: ParseOptions) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(source);
        let headers = reader.headers().map_err(|source| IngestError::Csv { path: path.to_owned(), source })?.clone();
        let mut index = [0usize; 10];
        for (slot, col) in index.iter_mut().zip(schema.columns()) {
            *slot = headers
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| IngestError::MissingColumn { path: path.to_owned(), column: col.to_owned() })?;
        }
        Ok(CdrReader {
            path: path.to_owned(),
            reader,
            index,
            opts,
            stats: ParseStats::default(),
            record: csv::StringRecord::new(),
        })
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    fn field(&self, i: usize) -> Result<&str, String> {
        self.record.get(self.index[i]).ok_or_else(|| "short row".to_owned())
    }

    fn parse_record(&self) -> Result<CdrEvent, String> {
        Ok(CdrEvent {
            timestamp: parse_num(self.field(0)?, "timestamp")?,
            caller: PersonId(parse_num(self.field(1)?, "caller_id")?),
            callee: PersonId(parse_num(self.field(2)?, "callee_id")?),
            kind: parse_kind(self.field(3)?)?,
            duration: parse_num(self.field(4)?, "duration")?,
            tower: TowerId(parse_num(self.field(5)?, "tower_id")?),
            caller_state: parse_state(self.field(6)?)?,
            callee_state: parse_state(self.field(7)?)?,
            caller_is_customer: parse_bool(self.field(8)?)?,
            callee_is_customer: parse_bool(self.field(9)?)?,
        })
    }

    /// Next valid record, `None` at end of input.
    pub fn next_event(&mut self) -> Result<Option<CdrEvent>, IngestError> {
        loop {
            let more = self
                .reader
                .read_record(&mut self.record)
                .map_err(|source| IngestError::Csv { path: self.path.clone(), source })?;
            if !more {
                return Ok(None);
            }
            self.stats.rows += 1;
            match self.parse_record() {
                Err(_) => self.stats.malformed += 1,
                Ok(e) => {
                    self.stats.parsed += 1;
                    match e.validate(&self.opts.window) {
                        Ok(()) => return Ok(Some(e)),
                        Err(d) => *self.stats.rejected.entry(d).or_default() += 1,
                    }
                }
            }
        }
    }

    /// Checks the malformed-row share against the tolerance.
    pub fn finish(self) -> Result<ParseStats, IngestError> {
        let s = self.stats;
        if s.rows > 0 && s.malformed as f64 > self.opts.tolerance * s.rows as f64 {
            return Err(IngestError::Tolerance {
                path: self.path,
                malformed: s.malformed,
                rows: s.rows,
                tolerance: self.opts.tolerance,
            });
        }
        Ok(s)
    }
}

impl<R: Read> Iterator for CdrReader<R> {
    type Item = Result<CdrEvent, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_event().transpose()
    }
}

/// Reads a whole record stream into memory.
pub fn read_cdr(
    source: impl Read,
    path: &Path,
    schema: &CdrSchema,
    opts: ParseOptions,
) -> Result<(Vec<CdrEvent>, ParseStats), IngestError> {
    let mut r = CdrReader::new(source, path, schema, opts)?;
    let mut out = Vec::new();
    while let Some(e) = r.next_event()? {
        out.push(e);
    }
    Ok((out, r.finish()?))
}

fn state_field(s: Option<StateCode>) -> String {
    s.map(|c| c.to_string()).unwrap_or_default()
}

/// Writes records under the canonical header.
pub fn write_cdr<'a>(sink: impl Write, events: impl IntoIterator<Item = &'a CdrEvent>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CdrSchema::default().columns())?;
    for e in events {
        w.write_record([
            e.timestamp.to_string(),
            e.caller.to_string(),
            e.callee.to_string(),
            e.kind.as_str().to_owned(),
            e.duration.to_string(),
            e.tower.to_string(),
            state_field(e.caller_state),
            state_field(e.callee_state),
            e.caller_is_customer.to_string(),
            e.callee_is_customer.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct TowerRow {
    tower_id: u16,
    latitude: f64,
    longitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    active: Option<bool>,
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source)
}

fn require_columns<R: Read>(r: &mut csv::Reader<R>, path: &Path, columns: &[&str]) -> Result<(), IngestError> {
    let headers = r.headers().map_err(|source| IngestError::Csv { path: path.to_owned(), source })?;
    for c in columns {
        if !headers.iter().any(|h| h == *c) {
            return Err(IngestError::MissingColumn { path: path.to_owned(), column: (*c).to_owned() });
        }
    }
    Ok(())
}

fn rows<T: serde::de::DeserializeOwned, R: Read>(
    source: R,
    path: &Path,
    columns: &[&str],
) -> Result<Vec<T>, IngestError> {
    let mut r = csv_reader(source);
    require_columns(&mut r, path, columns)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| IngestError::Row { path: path.to_owned(), line: i as u64 + 2, message: e.to_string() })
        })
        .collect()
}

/// Tower table; `active` defaults to true when the column is absent.
pub fn read_towers(source: impl Read, path: &Path) -> Result<Vec<TowerSite>, IngestError> {
    let rows: Vec<TowerRow> = rows(source, path, &["tower_id", "latitude", "longitude"])?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let id = TowerId(r.tower_id);
        if !seen.insert(id) {
            return Err(IngestError::DuplicateTower { path: path.to_owned(), id });
        }
        if !(r.latitude.abs() <= 90.0 && r.longitude.abs() <= 180.0) {
            return Err(IngestError::Row {
                path: path.to_owned(),
                line: i as u64 + 2,
                message: format!("coordinates ({}, {}) out of range", r.latitude, r.longitude),
            });
        }
        out.push(TowerSite { id, latitude: r.latitude, longitude: r.longitude, active: r.active.unwrap_or(true) });
    }
    Ok(out)
}

pub fn write_towers(sink: impl Write, towers: &[TowerSite]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for t in towers {
        w.serialize(TowerRow {
            tower_id: t.id.0,
            latitude: t.latitude,
            longitude: t.longitude,
            active: Some(t.active),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct ShareRow {
    state_code: u8,
    name: String,
    market_share: f64,
    is_local: bool,
}

pub fn read_market_shares(source: impl Read, path: &Path) -> Result<StateTable, IngestError> {
    let rows: Vec<ShareRow> = rows(source, path, &["state_code", "name", "market_share", "is_local"])?;
    let mut profiles = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let code = StateCode::new(r.state_code).ok_or_else(|| IngestError::Row {
            path: path.to_owned(),
            line: i as u64 + 2,
            message: format!("state code {} outside 1..=23", r.state_code),
        })?;
        profiles.push(StateProfile { code, name: r.name, market_share: r.market_share, is_local: r.is_local });
    }
    StateTable::new(profiles).map_err(|source| IngestError::States { path: path.to_owned(), source })
}

pub fn write_market_shares(sink: impl Write, states: &StateTable) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for s in states.iter() {
        w.serialize(ShareRow {
            state_code: s.code.get(),
            name: s.name.clone(),
            market_share: s.market_share,
            is_local: s.is_local,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct ProjectionRow {
    day: Day,
    projected_attendance: f64,
}

pub fn read_projections(source: impl Read, path: &Path) -> Result<BTreeMap<Day, f64>, IngestError> {
    let rows: Vec<ProjectionRow> = rows(source, path, &["day", "projected_attendance"])?;
    let mut out = BTreeMap::new();
    for (i, r) in rows.into_iter().enumerate() {
        let bad = |message: String| IngestError::Row { path: path.to_owned(), line: i as u64 + 2, message };
        if !(r.projected_attendance.is_finite() && r.projected_attendance > 0.0) {
            return Err(bad(format!("projection {} not positive", r.projected_attendance)));
        }
        if out.insert(r.day, r.projected_attendance).is_some() {
            return Err(bad(format!("day {} listed more than once", r.day)));
        }
    }
    Ok(out)
}

pub fn write_projections(sink: impl Write, projections: &BTreeMap<Day, f64>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for (&day, &projected_attendance) in projections {
        w.serialize(ProjectionRow { day, projected_attendance })?;
    }
    w.flush()?;
    Ok(())
}

/// The four input files of one dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPaths {
    pub cdr: PathBuf,
    pub towers: PathBuf,
    pub market_shares: PathBuf,
    pub projections: PathBuf,
}

impl InputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        InputPaths {
            cdr: dir.join(CDR_FILE),
            towers: dir.join(TOWERS_FILE),
            market_shares: dir.join(MARKET_SHARES_FILE),
            projections: dir.join(PROJECTIONS_FILE),
        }
    }
}

pub fn load_towers(path: &Path) -> Result<Vec<TowerSite>, IngestError> {
    read_towers(open(path)?, path)
}

pub fn load_market_shares(path: &Path) -> Result<StateTable, IngestError> {
    read_market_shares(open(path)?, path)
}

/// Missing file means no projections.
pub fn load_projections(path: &Path) -> Result<BTreeMap<Day, f64>, IngestError> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    read_projections(open(path)?, path)
}

/// Writes the four dataset files into `dir`.
pub fn write_dataset(
    dir: &Path,
    events: &[CdrEvent],
    towers: &[TowerSite],
    states: &StateTable,
    projections: &BTreeMap<Day, f64>,
) -> io::Result<InputPaths> {
    let paths = InputPaths::in_dir(dir);
    write_cdr(create(&paths.cdr)?, events)?;
    write_towers(create(&paths.towers)?, towers)?;
    write_market_shares(create(&paths.market_shares)?, states)?;
    write_projections(create(&paths.projections)?, projections)?;
    Ok(paths)
}

/// Writes a header and rows of already formatted fields.
pub fn write_table<S: AsRef<[u8]>>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<S>>,
) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_ROWS: &str = "\
timestamp,caller_id,callee_id,kind,duration,tower_id,caller_state,callee_state,caller_is_customer,callee_is_customer
1357000000,1,2,call,60,5,7,,true,false
1357000100,3,1,text,0,9,,7,false,true
1357003600,1,4,call,5,5,7,12,true,true
";

    fn parse(s: &str) -> Result<(Vec<CdrEvent>, ParseStats), IngestError> {
        read_cdr(s.as_bytes(), Path::new("cdr.csv"), &CdrSchema::default(), ParseOptions::default())
    }

    #[test]
    fn three_rows_no_rejects() {
        let (events, stats) = parse(THREE_ROWS).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!((stats.malformed, stats.rejected_total()), (0, 0));
        assert_eq!(events[1].callee_state, StateCode::new(7));
        assert_eq!(events[1].caller_state, None);
        assert_eq!(events[1].kind, EventKind::Text);
    }

    #[test]
    fn text_with_duration_rejected() {
        let s = format!("{THREE_ROWS}1357000200,5,6,text,12,9,3,3,true,true\n");
        let (events, stats) = parse(&s).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(stats.rejected_total(), 1);
        assert_eq!(stats.rejected[&EventDefect::TextWithDuration], 1);
    }

    #[test]
    fn missing_column_named() {
        let s = THREE_ROWS.replacen("tower_id", "cell", 1);
        match parse(&s) {
            Err(IngestError::MissingColumn { column, .. }) => assert_eq!(column, "tower_id"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn column_map_renames() {
        let s = THREE_ROWS.replacen("tower_id", "cell", 1).replacen("kind", "type", 1);
        let schema = CdrSchema { tower_id: "cell".into(), kind: "type".into(), ..Default::default() };
        let (a, _) = read_cdr(s.as_bytes(), Path::new("x"), &schema, ParseOptions::default()).unwrap();
        assert_eq!(a, parse(THREE_ROWS).unwrap().0);
    }

    #[test]
    fn column_order_is_free() {
        let s = "tower_id,timestamp,caller_id,callee_id,kind,duration,caller_state,callee_state,caller_is_customer,callee_is_customer\n\
                 5,1357000000,1,2,call,60,7,,true,false\n";
        let (a, _) = parse(s).unwrap();
        assert_eq!(a[0], parse(THREE_ROWS).unwrap().0[0]);
    }

    #[test]
    fn malformed_rows_counted_then_refused_above_tolerance() {
        let bad = "1357000000,x,2,call,60,5,7,,true,false\n";
        let mut s = String::from(THREE_ROWS);
        for _ in 0..97 {
            s.push_str("1357000000,1,2,call,60,5,7,,true,false\n");
        }
        s.push_str(bad);
        let (_, stats) = parse(&s).unwrap();
        assert_eq!((stats.rows, stats.malformed), (101, 1));
        s.push_str(bad);
        assert!(matches!(parse(&s), Err(IngestError::Tolerance { malformed: 2, .. })));
    }

    #[test]
    fn negative_duration_and_bad_state_are_malformed() {
        let s = format!("{THREE_ROWS}1357000000,1,2,call,-4,5,7,,true,false\n1357000000,1,2,call,4,5,24,,true,false\n");
        let opts = ParseOptions { tolerance: 1.0, ..Default::default() };
        let (_, stats) = read_cdr(s.as_bytes(), Path::new("x"), &CdrSchema::default(), opts).unwrap();
        assert_eq!(stats.malformed, 2);
    }

    #[test]
    fn window_and_customer_checks() {
        let s = format!("{THREE_ROWS}1,1,2,call,4,5,7,,true,false\n1357000000,1,2,call,4,5,7,7,false,false\n");
        let (events, stats) = parse(&s).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(stats.rejected[&EventDefect::OutsideWindow], 1);
        assert_eq!(stats.rejected[&EventDefect::NoCustomer], 1);
    }

    #[test]
    fn canonical_round_trip() {
        let (events, _) = parse(THREE_ROWS).unwrap();
        let mut buf = Vec::new();
        write_cdr(&mut buf, &events).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), THREE_ROWS);
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap().0, events);
    }

    #[test]
    fn towers_default_active_and_duplicates() {
        let t = read_towers("tower_id,latitude,longitude\n1,-22.9,-43.2\n2,-22.91,-43.21\n".as_bytes(), Path::new("t"))
            .unwrap();
        assert!(t.iter().all(|s| s.active));
        let err =
            read_towers("tower_id,latitude,longitude\n1,-22.9,-43.2\n1,-22.91,-43.21\n".as_bytes(), Path::new("t"));
        assert!(matches!(err, Err(IngestError::DuplicateTower { id: TowerId(1), .. })));
        let mut buf = Vec::new();
        write_towers(&mut buf, &t).unwrap();
        assert_eq!(read_towers(buf.as_slice(), Path::new("t")).unwrap(), t);
    }

    #[test]
    fn market_shares_need_one_local() {
        let ok = "state_code,name,market_share,is_local\n1,RJ,0.3,true\n2,SP,0.2,false\n";
        let table = read_market_shares(ok.as_bytes(), Path::new("m")).unwrap();
        assert_eq!(table.local(), StateCode::new(1).unwrap());
        let mut buf = Vec::new();
        write_market_shares(&mut buf, &table).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ok);
        let none = "state_code,name,market_share,is_local\n1,RJ,0.3,false\n";
        assert!(matches!(read_market_shares(none.as_bytes(), Path::new("m")), Err(IngestError::States { .. })));
        let zero = "state_code,name,market_share,is_local\n1,RJ,0,true\n";
        assert!(read_market_shares(zero.as_bytes(), Path::new("m")).is_err());
    }

    #[test]
    fn projections_round_trip_and_reject_duplicates() {
        let p: BTreeMap<Day, f64> = [(20, 1.5e6), (35, 2.25e6)].into_iter().collect();
        let mut buf = Vec::new();
        write_projections(&mut buf, &p).unwrap();
        assert_eq!(read_projections(buf.as_slice(), Path::new("p")).unwrap(), p);
        let dup = "day,projected_attendance\n20,1\n20,2\n";
        assert!(matches!(read_projections(dup.as_bytes(), Path::new("p")), Err(IngestError::Row { line: 3, .. })));
    }

    proptest::proptest! {
        #[test]
        fn parse_write_parse_identity(
            rows in proptest::collection::vec(
                (0i64..90 * 86_400, 0u64..1000, 0u64..1000, proptest::bool::ANY, 0u32..600, 0u16..300,
                 0u8..24, 0u8..24, proptest::bool::ANY, proptest::bool::ANY),
                0..40)
        ) {
            let events: Vec<CdrEvent> = rows.into_iter().map(|(t, a, b, text, dur, tower, sa, sb, ca, cb)| CdrEvent {
                timestamp: 1_356_998_400 + t,
                caller: PersonId(a),
                callee: PersonId(b),
                kind: if text { EventKind::Text } else { EventKind::Call },
                duration: if text { 0 } else { dur },
                tower: TowerId(tower),
                caller_state: StateCode::new(sa),
                callee_state: StateCode::new(sb),
                caller_is_customer: ca || !cb,
                callee_is_customer: cb,
            }).collect();
            let mut buf = Vec::new();
            write_cdr(&mut buf, &events).unwrap();
            let (back, stats) = read_cdr(buf.as_slice(), Path::new("x"), &CdrSchema::default(), ParseOptions::default()).unwrap();
            proptest::prop_assert_eq!(stats.rows, events.len() as u64);
            proptest::prop_assert_eq!(back, events);
        }
    }
}
