//! Path loss, Rayleigh fading and noise normalization.
//!
//! A link's gain is stored as gamma = |h|^2 d^-alpha / (N0 B), the received
//! SNR per mW of transmit power over the full system band `B`. Rayleigh
//! fading enters as the power |h|^2, exponential with unit mean.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::noma::{CellId, UserId};
use crate::scenario::ScenarioTopology;

/// Converts dBm (or dBm/Hz) to mW (or mW/Hz).
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Noise reference of the SIC gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SicReference {
    /// The gap is a ratio to the noise power spectral density (per Hz), so
    /// on a band of `w` Hz it is `sic_tolerance / w` in SNR terms.
    #[default]
    Hertz,
    /// The gap is an SNR-like ratio to the noise power of the band itself.
    Band,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    /// Per-cell transmit power budget, mW.
    pub tx_power: f64,
    /// mW/Hz.
    pub noise_density: f64,
    /// System bandwidth, Hz.
    pub bandwidth: f64,
    pub pathloss_exponent: f64,
    /// Minimum noise-normalized received power gap for SIC (linear).
    pub sic_tolerance: f64,
    pub sic_reference: SicReference,
}

impl RadioParams {
    pub fn new(
        tx_power: f64,
        noise_density: f64,
        bandwidth: f64,
        pathloss_exponent: f64,
        sic_tolerance: f64,
    ) -> Result<Self> {
        let params = RadioParams {
            tx_power,
            noise_density,
            bandwidth,
            pathloss_exponent,
            sic_tolerance,
            sic_reference: SicReference::Band,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tx_power", self.tx_power),
            ("noise_density", self.noise_density),
            ("bandwidth", self.bandwidth),
            ("pathloss_exponent", self.pathloss_exponent),
            ("sic_tolerance", self.sic_tolerance),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(
                    name,
                    format!("must be finite and positive, got {v}"),
                ));
            }
        }
        if self.pathloss_exponent < 2.0 {
            return Err(Error::validation("pathloss_exponent", "must be at least 2"));
        }
        Ok(())
    }

    pub fn with_sic_reference(self, sic_reference: SicReference) -> Self {
        RadioParams {
            sic_reference,
            ..self
        }
    }

    /// SIC gap in units of `p g` for gains normalized to a band of `width` Hz.
    pub fn sic_threshold(&self, width: f64) -> f64 {
        match self.sic_reference {
            SicReference::Band => self.sic_tolerance,
            SicReference::Hertz => self.sic_tolerance / width,
        }
    }

    /// Noise power over the full system band, mW.
    pub fn noise_power(&self) -> f64 {
        self.noise_density * self.bandwidth
    }
}

impl Default for RadioParams {
    /// 43 dBm, -139 dBm/Hz, 8.64 MHz, alpha = 4, 20 dB SIC gap over the
    /// noise density.
    fn default() -> Self {
        RadioParams {
            tx_power: dbm_to_mw(43.0),
            noise_density: dbm_to_mw(-139.0),
            bandwidth: 8.64e6,
            pathloss_exponent: 4.0,
            sic_tolerance: db_to_linear(20.0),
            sic_reference: SicReference::Hertz,
        }
    }
}

/// Noise-normalized channel power gain per mW of transmit power.
pub fn normalized_gain(distance: f64, fading_power: f64, params: &RadioParams) -> Result<f64> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::Domain(format!(
            "distance must be positive, got {distance}"
        )));
    }
    if fading_power.is_nan() || fading_power < 0.0 {
        return Err(Error::Domain(format!(
            "fading power must be non-negative, got {fading_power}"
        )));
    }
    Ok(fading_power * distance.powf(-params.pathloss_exponent) / params.noise_power())
}

/// Gains of every (cell, user) link for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Bandwidth the stored gains are normalized over, Hz.
    pub reference_bandwidth: f64,
    pub gains: BTreeMap<(CellId, UserId), f64>,
}

impl ChannelRealization {
    pub fn new(reference_bandwidth: f64) -> Self {
        ChannelRealization {
            reference_bandwidth,
            gains: BTreeMap::new(),
        }
    }

    pub fn from_entries(
        reference_bandwidth: f64,
        entries: impl IntoIterator<Item = ((CellId, UserId), f64)>,
    ) -> Self {
        ChannelRealization {
            reference_bandwidth,
            gains: entries.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, cell: CellId, user: UserId, gain: f64) {
        self.gains.insert((cell, user), gain);
    }

    /// Full-band gain.
    pub fn gain(&self, cell: CellId, user: UserId) -> Result<f64> {
        self.gains
            .get(&(cell, user))
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no gain for link {cell} -> {user}")))
    }

    /// Gain normalized to the noise power of a band of `width` Hz.
    pub fn in_band(&self, cell: CellId, user: UserId, width: f64) -> Result<f64> {
        let g = self.gain(cell, user)?;
        if width == self.reference_bandwidth {
            Ok(g)
        } else {
            Ok(g * (self.reference_bandwidth / width))
        }
    }

    /// Multiplies every gain by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ChannelRealization {
            reference_bandwidth: self.reference_bandwidth,
            gains: self.gains.iter().map(|(k, g)| (*k, g * factor)).collect(),
        }
    }
}

/// One unit-mean exponential fading power sample.
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

/// Draws independent Rayleigh fading for every cell-user link of the
/// topology, in cell-major order.
pub fn draw_realization<R: Rng + ?Sized>(
    topology: &ScenarioTopology,
    params: &RadioParams,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let mut realization = ChannelRealization::new(params.bandwidth);
    for cell in &topology.cells {
        for user in &topology.users {
            let distance = cell.position.distance(&user.position);
            let gain = normalized_gain(distance, sample_fading(rng), params)?;
            realization.insert(cell.id, user.id, gain);
        }
    }
    Ok(realization)
}
