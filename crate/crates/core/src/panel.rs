//! Sparse (quantity x instrument) forecast panels.
//!
//! A panel holds the long-form forecast entries plus per-quantity actuals,
//! and is the shared input shape for model fitting, inverse inference and the
//! reference baselines. Quantity and instrument ids are interned to dense
//! indices; entries are kept sorted by (quantity, instrument) with a row
//! index so per-quantity scans are contiguous.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};

/// One forecast: instrument `instrument` predicted `forecast` for quantity
/// `quantity`. Indices are panel-local; resolve ids through the panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelEntry {
    pub quantity: usize,
    pub instrument: usize,
    pub forecast: f64,
}

/// Sparse forecast panel with optional per-quantity actuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPanel {
    quantities: Vec<String>,
    instruments: Vec<String>,
    entries: Vec<PanelEntry>,
    actuals: Vec<Option<f64>>,
    rows: Vec<Range<usize>>,
}

impl ForecastPanel {
    pub fn builder() -> PanelBuilder {
        PanelBuilder::default()
    }

    pub fn num_quantities(&self) -> usize {
        self.quantities.len()
    }

    pub fn num_instruments(&self) -> usize {
        self.instruments.len()
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PanelEntry] {
        &self.entries
    }

    pub fn quantity_ids(&self) -> &[String] {
        &self.quantities
    }

    pub fn instrument_ids(&self) -> &[String] {
        &self.instruments
    }

    pub fn quantity_id(&self, index: usize) -> &str {
        &self.quantities[index]
    }

    pub fn instrument_id(&self, index: usize) -> &str {
        &self.instruments[index]
    }

    pub fn quantity_index(&self, id: &str) -> Option<usize> {
        self.quantities.iter().position(|q| q == id)
    }

    /// Actual change for a quantity, when known.
    pub fn actual(&self, quantity: usize) -> Option<f64> {
        self.actuals[quantity]
    }

    /// Sign flag of the actual change: `true` when the change is positive.
    pub fn sign_flag(&self, quantity: usize) -> Option<bool> {
        self.actuals[quantity].map(|x| x > 0.0)
    }

    /// Entries of one quantity, contiguous and sorted by instrument.
    pub fn entries_for(&self, quantity: usize) -> &[PanelEntry] {
        &self.entries[self.rows[quantity].clone()]
    }

    /// Error unless every quantity that has entries also has an actual.
    pub fn require_actuals(&self) -> Result<()> {
        for entry in &self.entries {
            if self.actuals[entry.quantity].is_none() {
                return Err(Error::InvalidInput(format!(
                    "quantity `{}` has forecasts but no actual",
                    self.quantities[entry.quantity]
                )));
            }
        }
        Ok(())
    }

    /// Partition quantities into (rest, listed). Both panels keep the full
    /// instrument table so instrument indices stay aligned across the split.
    pub fn split(&self, listed: &BTreeSet<String>) -> Result<(ForecastPanel, ForecastPanel)> {
        for id in listed {
            if self.quantity_index(id).is_none() {
                return Err(Error::InvalidInput(format!(
                    "split list names unknown quantity `{id}`"
                )));
            }
        }
        let mut rest = PartitionAccum::new(self.instruments.clone());
        let mut taken = PartitionAccum::new(self.instruments.clone());
        for (q, id) in self.quantities.iter().enumerate() {
            let target = if listed.contains(id) { &mut taken } else { &mut rest };
            target.push_quantity(id.clone(), self.actuals[q], self.entries_for(q));
        }
        Ok((rest.finish(), taken.finish()))
    }
}

struct PartitionAccum {
    quantities: Vec<String>,
    instruments: Vec<String>,
    entries: Vec<PanelEntry>,
    actuals: Vec<Option<f64>>,
    rows: Vec<Range<usize>>,
}

impl PartitionAccum {
    fn new(instruments: Vec<String>) -> Self {
        Self {
            quantities: Vec::new(),
            instruments,
            entries: Vec::new(),
            actuals: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn push_quantity(&mut self, id: String, actual: Option<f64>, entries: &[PanelEntry]) {
        let q = self.quantities.len();
        self.quantities.push(id);
        self.actuals.push(actual);
        let start = self.entries.len();
        for entry in entries {
            self.entries.push(PanelEntry { quantity: q, ..*entry });
        }
        self.rows.push(start..self.entries.len());
    }

    fn finish(self) -> ForecastPanel {
        ForecastPanel {
            quantities: self.quantities,
            instruments: self.instruments,
            entries: self.entries,
            actuals: self.actuals,
            rows: self.rows,
        }
    }
}

/// Incremental panel construction with duplicate detection.
#[derive(Debug, Default)]
pub struct PanelBuilder {
    quantities: Vec<String>,
    quantity_index: HashMap<String, usize>,
    instruments: Vec<String>,
    instrument_index: HashMap<String, usize>,
    entries: Vec<PanelEntry>,
    seen: BTreeSet<(usize, usize)>,
    actuals: HashMap<usize, f64>,
}

impl PanelBuilder {
    fn intern_quantity(&mut self, id: &str) -> usize {
        if let Some(&q) = self.quantity_index.get(id) {
            return q;
        }
        let q = self.quantities.len();
        self.quantities.push(id.to_string());
        self.quantity_index.insert(id.to_string(), q);
        q
    }

    fn intern_instrument(&mut self, id: &str) -> usize {
        if let Some(&j) = self.instrument_index.get(id) {
            return j;
        }
        let j = self.instruments.len();
        self.instruments.push(id.to_string());
        self.instrument_index.insert(id.to_string(), j);
        j
    }

    /// Add one forecast entry. A repeated (quantity, instrument) pair is a
    /// conflict error naming the pair.
    pub fn add_forecast(&mut self, quantity: &str, instrument: &str, forecast: f64) -> Result<()> {
        let q = self.intern_quantity(quantity);
        let j = self.intern_instrument(instrument);
        if !self.seen.insert((q, j)) {
            return Err(Error::InvalidInput(format!(
                "duplicate forecast for quantity `{quantity}`, instrument `{instrument}`"
            )));
        }
        self.entries.push(PanelEntry { quantity: q, instrument: j, forecast });
        Ok(())
    }

    /// Record the actual change of a quantity. Conflicting re-definition with
    /// a different value is an error.
    pub fn set_actual(&mut self, quantity: &str, actual: f64) -> Result<()> {
        let q = self.intern_quantity(quantity);
        if let Some(&prev) = self.actuals.get(&q)
            && prev != actual
        {
            return Err(Error::InvalidInput(format!(
                "conflicting actuals for quantity `{quantity}`: {prev} vs {actual}"
            )));
        }
        self.actuals.insert(q, actual);
        Ok(())
    }

    pub fn build(mut self) -> ForecastPanel {
        self.entries.sort_by_key(|e| (e.quantity, e.instrument));
        let mut rows = vec![0..0; self.quantities.len()];
        let mut i = 0;
        while i < self.entries.len() {
            let q = self.entries[i].quantity;
            let start = i;
            while i < self.entries.len() && self.entries[i].quantity == q {
                i += 1;
            }
            rows[q] = start..i;
        }
        let actuals = (0..self.quantities.len())
            .map(|q| self.actuals.get(&q).copied())
            .collect();
        ForecastPanel {
            quantities: self.quantities,
            instruments: self.instruments,
            entries: self.entries,
            actuals,
            rows,
        }
    }
}
