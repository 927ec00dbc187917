//! Seeded geometric-random-walk price fixtures.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::PriceStream;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticAsset {
    pub symbol: String,
    pub initial_price: f64,
    /// Mean daily log return.
    pub drift: f64,
    pub daily_vol: f64,
    /// Days after the market start before the first close.
    pub listing_offset: usize,
}

/// Daily closes driven by one common factor plus idiosyncratic noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub start: NaiveDate,
    pub days: usize,
    pub seed: u64,
    /// Loading of every asset on the common factor, in `[0, 1]`.
    pub market_correlation: f64,
    pub assets: Vec<SyntheticAsset>,
}

impl SyntheticMarket {
    /// `n` assets listed from day 0 with parameters drawn from `seed`.
    pub fn random(n: usize, start: NaiveDate, days: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        let assets = (0..n)
            .map(|i| SyntheticAsset {
                symbol: format!("A{i:02}"),
                initial_price: 10f64.powf(rng.random_range(-1.0..4.0)),
                drift: rng.random_range(-0.001..0.002),
                daily_vol: rng.random_range(0.015..0.07),
                listing_offset: 0,
            })
            .collect();
        SyntheticMarket {
            start,
            days,
            seed,
            market_correlation: 0.5,
            assets,
        }
    }

    pub fn generate(&self) -> Vec<PriceStream> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let rho = self.market_correlation.clamp(0.0, 1.0);
        let idio = (1.0 - rho * rho).sqrt();
        let mut logs: Vec<f64> = self.assets.iter().map(|a| a.initial_price.ln()).collect();
        let mut obs: Vec<Vec<(NaiveDate, f64)>> = vec![Vec::new(); self.assets.len()];
        for day in 0..self.days {
            let date = self.start + Duration::days(day as i64);
            let market: f64 = rng.sample(StandardNormal);
            for (i, a) in self.assets.iter().enumerate() {
                let own: f64 = rng.sample(StandardNormal);
                if day > 0 {
                    logs[i] += a.drift + a.daily_vol * (rho * market + idio * own);
                }
                if day >= a.listing_offset {
                    obs[i].push((date, logs[i].exp()));
                }
            }
        }
        self.assets
            .iter()
            .zip(obs)
            .filter(|(_, o)| !o.is_empty())
            .map(|(a, o)| PriceStream::new(a.symbol.clone(), o).expect("generated closes are valid"))
            .collect()
    }
}

/// Writes streams as `date,symbol,close` CSV, ordered by date then symbol.
pub fn write_prices_csv<W: Write>(out: W, streams: &[PriceStream]) -> Result<()> {
    let mut rows: Vec<(NaiveDate, &str, f64)> = streams
        .iter()
        .flat_map(|s| s.observations().iter().map(move |(d, c)| (*d, s.symbol.as_str(), *c)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["date", "symbol", "close"])?;
    for (d, s, c) in rows {
        wtr.write_record([d.to_string(), s.to_string(), c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_prices;

    #[test]
    fn csv_round_trip_and_listing_offsets() {
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
        let mut m = SyntheticMarket::random(3, start, 40, 9);
        m.assets[2].listing_offset = 10;
        let streams = m.generate();
        assert_eq!(streams[2].observations().len(), 30);
        let mut buf = Vec::new();
        write_prices_csv(&mut buf, &streams).unwrap();
        let back = read_prices(buf.as_slice()).unwrap();
        assert_eq!(back, streams);
        assert_eq!(m.generate(), streams);
    }
}
