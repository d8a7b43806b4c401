use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Args;
use labnet_core::api::QueryDoc;
use labnet_core::storage::StoreOptions;
use labnet_core::{Clock, SeriesFrame, SeriesKey, SeriesQuery, Store, SystemClock};

use crate::config::parse_instant;
use crate::{Ctx, SourceArgs, Usage};

/// Which series, over which time range.
#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    /// Exact series key, e.g. "temperature,DevID=Dev01,RoomID=Lab03 T1" (repeatable)
    #[arg(long, value_name = "KEY")]
    pub series: Vec<String>,

    /// Select every series of a measurement
    #[arg(short, long)]
    pub measurement: Option<String>,

    /// Tag filter for --measurement (repeatable)
    #[arg(long = "tag", value_name = "K=V", requires = "measurement")]
    pub tags: Vec<String>,

    /// Field filter for --measurement (repeatable)
    #[arg(long = "field", value_name = "FIELD", requires = "measurement")]
    pub fields: Vec<String>,

    /// Range start: epoch ns, RFC 3339, "now" or "now-<duration>"
    #[arg(long, value_name = "TIME")]
    pub start: Option<String>,

    /// Range end, exclusive
    #[arg(long, value_name = "TIME")]
    pub end: Option<String>,
}

impl SelectArgs {
    pub fn range(&self) -> Result<(i64, i64), Usage> {
        let now = SystemClock.now_ns();
        let t = |s: &Option<String>, default: i64| match s {
            Some(s) => parse_instant(s, now).map_err(Usage),
            None => Ok(default),
        };
        let (start, end) = (t(&self.start, 0)?, t(&self.end, i64::MAX)?);
        if start >= end {
            return Err(Usage(format!("empty time range [{start}, {end})")));
        }
        Ok((start, end))
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty() && self.measurement.is_none()
    }
}

pub enum Source {
    Local(Store),
    Remote {
        base: String,
        token: Option<String>,
        agent: ureq::Agent,
    },
}

/// Opens an existing store without creating or modifying anything.
pub fn open_existing(dir: &Path, read_only: bool) -> anyhow::Result<Store> {
    if !dir.join("VERSION").exists() {
        bail!("no store at {}", dir.display());
    }
    let opts = StoreOptions {
        read_only,
        ..StoreOptions::default()
    };
    Store::open_with(dir, opts).with_context(|| format!("opening store {}", dir.display()))
}

impl Source {
    pub fn open(ctx: &Ctx, args: &SourceArgs) -> anyhow::Result<Self> {
        let url = match (&args.url, &args.data) {
            (Some(u), _) => Some(u.clone()),
            (None, None) => ctx.settings.url.clone(),
            (None, Some(_)) => None,
        };
        match url {
            Some(base) => Ok(Source::Remote {
                base: base.trim_end_matches('/').to_string(),
                token: args.token.clone().or_else(|| ctx.settings.token.clone()),
                agent: ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs(30)))
                    .http_status_as_error(false)
                    .build()
                    .into(),
            }),
            None => {
                let dir = args.data.clone().unwrap_or_else(|| ctx.settings.data_dir.clone());
                Ok(Source::Local(open_existing(&dir, true)?))
            }
        }
    }

    pub fn query(&self, q: &SeriesQuery) -> anyhow::Result<Vec<SeriesFrame>> {
        match self {
            Source::Local(store) => Ok(store.query(q)?),
            Source::Remote { base, token, agent } => {
                let mut req = agent
                    .get(format!("{base}/query"))
                    .query("measurement", &q.measurement)
                    .query("start", q.start.to_string())
                    .query("end", q.end.to_string())
                    .query("format", "json");
                for (k, v) in &q.tags {
                    req = req.query(format!("tag.{k}"), v);
                }
                for f in &q.fields {
                    req = req.query("field", f);
                }
                if let Some(a) = &q.aggregation {
                    req = req
                        .query("agg", a.aggregator.to_string())
                        .query("bucket_s", (a.bucket_ns as f64 / 1e9).to_string());
                }
                if let Some(l) = q.limit {
                    req = req.query("limit", l.to_string());
                }
                if let Some(t) = token {
                    req = req.header("Authorization", format!("Bearer {t}"));
                }
                let mut resp = req.call().with_context(|| format!("querying {base}"))?;
                let status = resp.status().as_u16();
                let body = resp.body_mut().read_to_string()?;
                if status != 200 {
                    bail!("{base}/query answered {status}: {}", body.trim());
                }
                let doc: QueryDoc = serde_json::from_str(&body).context("decoding query response")?;
                Ok(doc.frames.into_iter().map(|f| f.into_frame()).collect())
            }
        }
    }

    /// Frames for `sel`; with an empty selection, every series in a local store.
    pub fn select(
        &self,
        sel: &SelectArgs,
        shape: impl Fn(SeriesQuery) -> SeriesQuery,
    ) -> anyhow::Result<Vec<SeriesFrame>> {
        let (start, end) = sel.range()?;
        let mut keys = Vec::new();
        for s in &sel.series {
            keys.push(
                s.parse::<SeriesKey>()
                    .map_err(|e| Usage(format!("--series {s:?}: {e}")))?,
            );
        }
        if sel.is_empty() {
            match self {
                Source::Local(store) => keys = store.series_keys(),
                Source::Remote { .. } => {
                    return Err(Usage("--url needs --series or --measurement".into()).into())
                }
            }
        }
        let mut out: Vec<SeriesFrame> = Vec::new();
        for key in &keys {
            let mut q = SeriesQuery::new(&key.measurement, start, end).field(&key.field);
            for (k, v) in &key.tags {
                q = q.tag(k, v);
            }
            let q = shape(q);
            q.validate().map_err(Usage)?;
            match self.query(&q)?.into_iter().find(|f| &f.key == key) {
                Some(f) => out.push(f),
                None => log::warn!("no points for {key}"),
            }
        }
        if let Some(m) = &sel.measurement {
            let mut q = SeriesQuery::new(m, start, end);
            for t in &sel.tags {
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| Usage(format!("--tag {t:?}: expected K=V")))?;
                q = q.tag(k, v);
            }
            for f in &sel.fields {
                q = q.field(f);
            }
            let q = shape(q);
            q.validate().map_err(Usage)?;
            for f in self.query(&q)? {
                if !out.iter().any(|o| o.key == f.key) {
                    out.push(f);
                }
            }
        }
        Ok(out)
    }
}
