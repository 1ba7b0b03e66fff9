//! Token and call accounting for chat-model usage, priced in exact integer
//! arithmetic.
//!
//! Prices are held as micro-dollars per one million tokens. Multiplying a
//! token count by such a price yields an exact amount in picodollars
//! (1e-12 USD), so costs add up without rounding until they are rendered.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PICOS_PER_MICRO: u128 = 1_000_000;
const PICOS_PER_CENT: u128 = 10_000_000_000;
const MICROS_PER_DOLLAR: u64 = 1_000_000;

/// Exact monetary amount in picodollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(u128);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_picos(picos: u128) -> Self {
        Money(picos)
    }

    pub fn from_micros(micros: u64) -> Self {
        Money(micros as u128 * PICOS_PER_MICRO)
    }

    pub fn picos(self) -> u128 {
        self.0
    }

    /// Whole micro-dollars, rounded half up.
    pub fn micros(self) -> u128 {
        (self.0 + PICOS_PER_MICRO / 2) / PICOS_PER_MICRO
    }

    /// Whole cents, rounded half up.
    pub fn cents(self) -> u128 {
        (self.0 + PICOS_PER_CENT / 2) / PICOS_PER_CENT
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1e12
    }

    /// Dollars with six decimals, for small per-run figures.
    pub fn display_micros(self) -> String {
        let m = self.micros();
        format!("{}.{:06}", m / MICROS_PER_DOLLAR as u128, m % MICROS_PER_DOLLAR as u128)
    }
}

impl fmt::Display for Money {
    /// Dollars rounded to the cent, e.g. `1656.00`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.cents();
        write!(f, "{}.{:02}", c / 100, c % 100)
    }
}

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

/// Parses a non-negative decimal dollar amount (`"15"`, `"0.075"`) into
/// micro-dollars without going through floating point.
pub fn parse_usd_micros(text: &str) -> Result<u64> {
    let text = text.trim().trim_start_matches('$');
    let bad = || Error::invalid(format!("`{text}` is not a dollar amount"));
    if text.is_empty() || text.starts_with('-') {
        return Err(bad());
    }
    let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let frac_trimmed = frac.trim_end_matches('0');
    if frac_trimmed.len() > 6 {
        return Err(Error::invalid(format!("`{text}` has sub-micro-dollar precision")));
    }
    let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| bad())? };
    let frac_micros: u64 = if frac_trimmed.is_empty() {
        0
    } else {
        format!("{frac_trimmed:0<6}").parse().map_err(|_| bad())?
    };
    whole
        .checked_mul(MICROS_PER_DOLLAR)
        .and_then(|w| w.checked_add(frac_micros))
        .ok_or_else(bad)
}

/// Converts a float price from a config file via its shortest decimal form.
pub fn usd_f64_to_micros(value: f64) -> Result<u64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::invalid(format!("price {value} must be a non-negative number")));
    }
    let text = format!("{value}");
    if text.contains('e') {
        let micros = (value * MICROS_PER_DOLLAR as f64).round();
        return Ok(micros as u64);
    }
    parse_usd_micros(&text)
}

/// Price of one million input and output tokens, in micro-dollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Price {
    pub input_per_1m_micros: u64,
    pub output_per_1m_micros: u64,
}

impl Price {
    pub fn from_micros(input_per_1m_micros: u64, output_per_1m_micros: u64) -> Self {
        Self {
            input_per_1m_micros,
            output_per_1m_micros,
        }
    }

    /// Whole-dollar prices per million tokens.
    pub fn usd(input_per_1m: u64, output_per_1m: u64) -> Self {
        Self::from_micros(input_per_1m * MICROS_PER_DOLLAR, output_per_1m * MICROS_PER_DOLLAR)
    }

    /// Parses `"15,60"` style `input,output` pairs.
    pub fn parse_pair(text: &str) -> Result<Self> {
        let (i, o) = text
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("price `{text}` must look like `input,output`")))?;
        Ok(Self::from_micros(parse_usd_micros(i)?, parse_usd_micros(o)?))
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> Money {
        Money(
            input_tokens as u128 * self.input_per_1m_micros as u128
                + output_tokens as u128 * self.output_per_1m_micros as u128,
        )
    }
}

/// Cost of labeling `n_samples` with one call each, at the given per-sample
/// token counts: `n * (in * p_in + out * p_out) / 1e6`.
pub fn estimate_cost(n_samples: i64, in_tokens_per_sample: i64, out_tokens_per_sample: i64, price: Price) -> Result<Money> {
    if n_samples < 0 || in_tokens_per_sample < 0 || out_tokens_per_sample < 0 {
        return Err(Error::invalid("cost estimate inputs must be non-negative"));
    }
    let per_sample = price.cost(in_tokens_per_sample as u64, out_tokens_per_sample as u64);
    Ok(Money(per_sample.0 * n_samples as u128))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
}

impl Usage {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
        self.calls += rhs.calls;
    }
}

/// What an LLM call was made for. Selection calls are kept apart from review
/// calls so the per-sample call count stays comparable to the direct baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Review,
    Selection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub provider: String,
    pub purpose: Purpose,
    pub usage: Usage,
}

/// Per-provider usage counters plus the price table used to value them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    entries: Vec<LedgerEntry>,
    prices: BTreeMap<String, Price>,
}

pub type SharedLedger = Arc<Mutex<CostLedger>>;

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_prices(prices: BTreeMap<String, Price>) -> Self {
        Self {
            entries: Vec::new(),
            prices,
        }
    }

    pub fn shared(self) -> SharedLedger {
        Arc::new(Mutex::new(self))
    }

    pub fn set_price(&mut self, provider: impl Into<String>, price: Price) {
        self.prices.insert(provider.into(), price);
    }

    pub fn price(&self, provider: &str) -> Option<Price> {
        self.prices.get(provider).copied()
    }

    pub fn prices(&self) -> &BTreeMap<String, Price> {
        &self.prices
    }

    /// Records one issued request. Failed requests are recorded with zero tokens.
    pub fn record(&mut self, provider: &str, purpose: Purpose, input_tokens: u64, output_tokens: u64) {
        let usage = Usage {
            input_tokens,
            output_tokens,
            calls: 1,
        };
        match self
            .entries
            .iter_mut()
            .find(|e| e.provider == provider && e.purpose == purpose)
        {
            Some(entry) => entry.usage += usage,
            None => {
                self.entries.push(LedgerEntry {
                    provider: provider.to_string(),
                    purpose,
                    usage,
                });
                self.entries
                    .sort_by(|a, b| (a.provider.as_str(), a.purpose).cmp(&(b.provider.as_str(), b.purpose)));
            }
        }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn usage(&self, purpose: Option<Purpose>) -> Usage {
        let mut total = Usage::default();
        for e in self.entries.iter().filter(|e| purpose.is_none_or(|p| p == e.purpose)) {
            total += e.usage;
        }
        total
    }

    pub fn calls(&self, purpose: Purpose) -> u64 {
        self.usage(Some(purpose)).calls
    }

    /// Usage per provider across purposes.
    pub fn by_provider(&self) -> BTreeMap<String, Usage> {
        let mut out: BTreeMap<String, Usage> = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.provider.clone()).or_default() += e.usage;
        }
        out
    }

    /// Cost of one provider's usage. Providers without a price cost nothing.
    pub fn provider_cost(&self, provider: &str) -> Money {
        let usage = self.by_provider().get(provider).copied().unwrap_or_default();
        self.price(provider)
            .map(|p| p.cost(usage.input_tokens, usage.output_tokens))
            .unwrap_or_default()
    }

    pub fn total_cost(&self) -> Money {
        self.by_provider().keys().map(|p| self.provider_cost(p)).sum()
    }

    pub fn unpriced_providers(&self) -> Vec<String> {
        self.by_provider()
            .into_keys()
            .filter(|p| !self.prices.contains_key(p))
            .collect()
    }

    /// Serializable view including derived costs.
    pub fn summary(&self) -> LedgerSummary {
        let providers = self
            .by_provider()
            .into_iter()
            .map(|(provider, usage)| {
                let cost = self.provider_cost(&provider);
                ProviderSummary {
                    review_calls: self
                        .entries
                        .iter()
                        .filter(|e| e.provider == provider && e.purpose == Purpose::Review)
                        .map(|e| e.usage.calls)
                        .sum(),
                    selection_calls: self
                        .entries
                        .iter()
                        .filter(|e| e.provider == provider && e.purpose == Purpose::Selection)
                        .map(|e| e.usage.calls)
                        .sum(),
                    provider,
                    usage,
                    cost_usd: cost.display_micros(),
                }
            })
            .collect();
        LedgerSummary {
            providers,
            review_calls: self.calls(Purpose::Review),
            selection_calls: self.calls(Purpose::Selection),
            total_cost_usd: self.total_cost().display_micros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSummary {
    pub provider: String,
    pub usage: Usage,
    pub review_calls: u64,
    pub selection_calls: u64,
    pub cost_usd: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub providers: Vec<ProviderSummary>,
    pub review_calls: u64,
    pub selection_calls: u64,
    pub total_cost_usd: String,
}
