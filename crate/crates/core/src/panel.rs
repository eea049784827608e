//! Panel time series: per-entity daily counts, business metadata, and the
//! study calendar.
//!
//! Days are integer offsets from the panel epoch. A missing day is distinct
//! from a zero count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training end `n`, shock day `m`, and calendar length `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyWindows {
    pub train_end: usize,
    pub shock_day: usize,
    pub horizon: usize,
    #[serde(default)]
    pub secondary_shock_day: Option<usize>,
}

impl Default for StudyWindows {
    fn default() -> Self {
        Self {
            train_end: 150,
            shock_day: 262,
            horizon: 400,
            secondary_shock_day: Some(248),
        }
    }
}

impl StudyWindows {
    pub fn new(train_end: usize, shock_day: usize, horizon: usize) -> Result<Self> {
        let w = Self {
            train_end,
            shock_day,
            horizon,
            secondary_shock_day: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.train_end && self.train_end <= self.shock_day && self.shock_day < self.horizon) {
            return Err(Error::Windows(format!(
                "need 0 < n <= m < N, got n={}, m={}, N={}",
                self.train_end, self.shock_day, self.horizon
            )));
        }
        if let Some(s) = self.secondary_shock_day {
            if s >= self.horizon {
                return Err(Error::Windows(format!("secondary shock day {s} outside calendar")));
            }
        }
        Ok(())
    }

    /// Days predicted by the counterfactual, `N − n`.
    pub fn forecast_len(&self) -> usize {
        self.horizon - self.train_end
    }
}

/// The nine business categories, in the fixed order used for effect indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    BuildingMaterial,
    GasolineStations,
    GroceryStores,
    Hospitals,
    Hotels,
    Restaurants,
    Supermarkets,
    Telecommunication,
    Universities,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::BuildingMaterial,
        Category::GasolineStations,
        Category::GroceryStores,
        Category::Hospitals,
        Category::Hotels,
        Category::Restaurants,
        Category::Supermarkets,
        Category::Telecommunication,
        Category::Universities,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::BuildingMaterial => "Building Material",
            Category::GasolineStations => "Gasoline Stations",
            Category::GroceryStores => "Grocery Stores",
            Category::Hospitals => "Hospitals",
            Category::Hotels => "Hotels",
            Category::Restaurants => "Restaurants",
            Category::Supermarkets => "Supermarkets",
            Category::Telecommunication => "Telecommunication",
            Category::Universities => "Universities",
        }
    }
}

fn normalize_label(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = normalize_label(s);
        Category::ALL
            .into_iter()
            .find(|c| normalize_label(c.label()) == key)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Target-area regions carry a fixed index; any other label is a
/// control-region name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    SanJuan,
    Metro,
    Rural,
    Other(String),
}

impl Region {
    pub const TARGET: [Region; 3] = [Region::SanJuan, Region::Metro, Region::Rural];

    pub fn index(&self) -> Option<usize> {
        match self {
            Region::SanJuan => Some(0),
            Region::Metro => Some(1),
            Region::Rural => Some(2),
            Region::Other(_) => None,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Region::SanJuan => "SanJuan",
            Region::Metro => "Metro",
            Region::Rural => "Rural",
            Region::Other(s) => s,
        }
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match normalize_label(s).as_str() {
            "sanjuan" => Region::SanJuan,
            "metro" => Region::Metro,
            "rural" => Region::Rural,
            _ => Region::Other(s.trim().to_string()),
        })
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusinessMeta {
    pub entity_id: String,
    pub category: Category,
    pub region: Region,
    pub brand: Option<String>,
    pub county_id: String,
    /// Share of county households with heavy housing damage.
    pub damage_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitSeries {
    pub entity_id: String,
    pub values: Vec<Option<u32>>,
}

impl VisitSeries {
    pub fn new(entity_id: impl Into<String>, values: Vec<Option<u32>>) -> Self {
        Self {
            entity_id: entity_id.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_real(&self) -> Vec<Option<f64>> {
        self.values.iter().map(|v| v.map(f64::from)).collect()
    }

    pub fn present_count(&self, range: std::ops::Range<usize>) -> usize {
        self.values[range].iter().filter(|v| v.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelRole {
    Treated,
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub series: BTreeMap<String, VisitSeries>,
    pub meta: BTreeMap<String, BusinessMeta>,
    pub windows: StudyWindows,
    pub role: PanelRole,
}

impl Panel {
    pub fn new(windows: StudyWindows, role: PanelRole) -> Self {
        Self {
            series: BTreeMap::new(),
            meta: BTreeMap::new(),
            windows,
            role,
        }
    }

    pub fn insert(&mut self, series: VisitSeries, meta: BusinessMeta) -> Result<()> {
        if series.entity_id != meta.entity_id {
            return Err(Error::entity(&series.entity_id, "series and metadata ids differ"));
        }
        if series.len() != self.windows.horizon {
            return Err(Error::entity(
                &series.entity_id,
                format!(
                    "series length {} != calendar length {}",
                    series.len(),
                    self.windows.horizon
                ),
            ));
        }
        self.meta.insert(meta.entity_id.clone(), meta);
        self.series.insert(series.entity_id.clone(), series);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &String> {
        self.series.keys()
    }
}

#[derive(Debug, Deserialize)]
struct VisitRow {
    entity_id: String,
    day: i64,
    visits: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRow {
    entity_id: String,
    category: String,
    region: String,
    brand: Option<String>,
    county_id: String,
    damage_rate: Option<f64>,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn row_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Row {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_row_error(path: &Path, err: csv::Error) -> Error {
    match err.position() {
        Some(pos) => row_error(path, pos.line(), err.to_string()),
        None => Error::csv(path, err),
    }
}

/// Reads `visits.csv` and `meta.csv` into a panel on the given calendar.
pub fn load_panel(visits_path: &Path, meta_path: &Path, windows: StudyWindows, role: PanelRole) -> Result<Panel> {
    windows.validate()?;
    let n_days = windows.horizon;

    let mut values: BTreeMap<String, Vec<Option<u32>>> = BTreeMap::new();
    let mut rdr = reader(visits_path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(visits_path, e))?.clone();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_row_error(visits_path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: VisitRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| row_error(visits_path, line, e.to_string()))?;
        if row.entity_id.is_empty() {
            return Err(row_error(visits_path, line, "empty entity_id"));
        }
        if row.day < 0 || row.day as usize >= n_days {
            return Err(row_error(
                visits_path,
                line,
                format!("day {} outside [0, {n_days})", row.day),
            ));
        }
        if row.visits < 0 {
            return Err(row_error(
                visits_path,
                line,
                format!("visits = {} violates visits >= 0", row.visits),
            ));
        }
        let count = u32::try_from(row.visits)
            .map_err(|_| row_error(visits_path, line, format!("visits = {} too large", row.visits)))?;
        let slot = &mut values
            .entry(row.entity_id.clone())
            .or_insert_with(|| vec![None; n_days])[row.day as usize];
        if slot.is_some() {
            return Err(row_error(
                visits_path,
                line,
                format!("duplicate (entity_id, day) = ({}, {})", row.entity_id, row.day),
            ));
        }
        *slot = Some(count);
    }

    let mut meta = BTreeMap::new();
    let mut rdr = reader(meta_path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(meta_path, e))?.clone();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_row_error(meta_path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: MetaRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| row_error(meta_path, line, e.to_string()))?;
        let category: Category = row
            .category
            .parse()
            .map_err(|e: Error| row_error(meta_path, line, e.to_string()))?;
        let region: Region = row.region.parse()?;
        if let Some(d) = row.damage_rate {
            if !(0.0..=1.0).contains(&d) {
                return Err(row_error(meta_path, line, format!("damage_rate {d} outside [0, 1]")));
            }
        }
        if meta.contains_key(&row.entity_id) {
            return Err(row_error(
                meta_path,
                line,
                format!("duplicate metadata for entity {}", row.entity_id),
            ));
        }
        meta.insert(
            row.entity_id.clone(),
            BusinessMeta {
                entity_id: row.entity_id,
                category,
                region,
                brand: row.brand.filter(|b| !b.is_empty()),
                county_id: row.county_id,
                damage_rate: row.damage_rate,
            },
        );
    }

    let visit_ids: BTreeSet<&String> = values.keys().collect();
    if let Some(id) = visit_ids.iter().find(|id| !meta.contains_key(**id)) {
        return Err(Error::MissingMeta((*id).clone()));
    }
    if let Some(id) = meta.keys().find(|id| !visit_ids.contains(id)) {
        return Err(Error::UnreferencedMeta(id.clone()));
    }

    let series = values
        .into_iter()
        .map(|(id, v)| (id.clone(), VisitSeries::new(id, v)))
        .collect();
    Ok(Panel {
        series,
        meta,
        windows,
        role,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes a panel in the same schemas `load_panel` reads. Rows are ordered
/// by entity id, then day; missing days produce no row.
pub fn save_panel(panel: &Panel, visits_path: &Path, meta_path: &Path) -> Result<()> {
    let mut w = writer(visits_path)?;
    w.write_record(["entity_id", "day", "visits"])
        .map_err(|e| Error::csv(visits_path, e))?;
    for s in panel.series.values() {
        for (day, v) in s.values.iter().enumerate() {
            if let Some(v) = v {
                w.write_record([s.entity_id.as_str(), &day.to_string(), &v.to_string()])
                    .map_err(|e| Error::csv(visits_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(visits_path, e))?;

    let mut w = writer(meta_path)?;
    for m in panel.meta.values() {
        w.serialize(MetaRow {
            entity_id: m.entity_id.clone(),
            category: m.category.label().to_string(),
            region: m.region.label().to_string(),
            brand: m.brand.clone(),
            county_id: m.county_id.clone(),
            damage_rate: m.damage_rate,
        })
        .map_err(|e| Error::csv(meta_path, e))?;
    }
    w.flush().map_err(|e| Error::io(meta_path, e))?;
    Ok(())
}

/// Mean of present values over days `[0, end)`.
pub fn mean_before(series: &VisitSeries, end: usize) -> Result<f64> {
    let present: Vec<f64> = series.values[..end.min(series.len())]
        .iter()
        .flatten()
        .map(|&v| f64::from(v))
        .collect();
    if present.is_empty() {
        return Err(Error::InsufficientData(format!(
            "entity {} has no observations before day {end}",
            series.entity_id
        )));
    }
    Ok(crate::stats::mean(&present))
}

/// Pre-disaster mean visits `ȳ` over the training window `[0, n)`.
pub fn pre_disaster_mean(series: &VisitSeries, windows: &StudyWindows) -> Result<f64> {
    mean_before(series, windows.train_end)
}

/// Keeps entities whose pre-disaster mean is strictly greater than
/// `min_mean`. Entities with an empty training window are dropped.
pub fn filter_eligible(panel: &Panel, min_mean: f64) -> Panel {
    let keep: Vec<&String> = panel
        .series
        .iter()
        .filter(|(_, s)| matches!(pre_disaster_mean(s, &panel.windows), Ok(m) if m > min_mean))
        .map(|(id, _)| id)
        .collect();
    Panel {
        series: keep
            .iter()
            .map(|id| ((*id).clone(), panel.series[*id].clone()))
            .collect(),
        meta: keep.iter().map(|id| ((*id).clone(), panel.meta[*id].clone())).collect(),
        windows: panel.windows,
        role: panel.role,
    }
}
