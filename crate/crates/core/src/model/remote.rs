//! HTTP client for a logits bridge.
//!
//! Endpoints (all JSON, natural-log float64 values):
//!
//! * `POST /v1/logprobs` `{"prefix_ids": [..], "candidate_ids": [..] | null}`
//!   → `{"logprobs": [..]}`; a `null` candidate list means every id in id
//!   order. A body `{"batch": [<query>, ..]}` answers
//!   `{"batch": [{"logprobs": [..]}, ..]}`.
//! * `GET /v1/vocab` → the vocabulary JSON.
//! * `POST /v1/canonical` `{"text": ".."}` → `{"ids": [..]}`.
//! * `GET /v1/health` → `{"status": "ok"}`.
//!
//! JSON has no infinities, so a zero-probability entry may arrive as `null`
//! or as Python's `-Infinity`; both read as negative infinity.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_ids, ModelError, Query, ScoringModel};
use crate::vocab::{TokenId, VocabFile};

pub const BRIDGE_URL_ENV: &str = "TOKSPACE_BRIDGE_URL";

#[derive(Serialize)]
struct LogprobsRequest<'a> {
    prefix_ids: &'a [TokenId],
    candidate_ids: Option<&'a [TokenId]>,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    batch: Vec<LogprobsRequest<'a>>,
}

#[derive(Deserialize)]
struct LogprobsResponse {
    #[serde(deserialize_with = "nulls_as_neg_infinity")]
    logprobs: Vec<f64>,
}

/// Parses a response body. Responses carry ids and floats only, so the
/// `-Infinity` token cannot sit inside a string.
fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ModelError> {
    serde_json::from_str(&text.replace("-Infinity", "null"))
        .map_err(|e| ModelError::Protocol(e.to_string()))
}

fn nulls_as_neg_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let raw: Vec<Option<f64>> = Deserialize::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|x| x.unwrap_or(f64::NEG_INFINITY))
        .collect())
}

#[derive(Deserialize)]
struct BatchResponse {
    batch: Vec<LogprobsResponse>,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct CanonicalResponse {
    ids: Vec<TokenId>,
}

#[derive(Deserialize)]
struct HealthResponse {
    status: String,
}

/// A model served over HTTP. Responses are cached per query.
pub struct RemoteModel {
    base: String,
    client: reqwest::blocking::Client,
    vocab: VocabFile,
    bos: Option<TokenId>,
    cache: Mutex<HashMap<Query, Vec<f64>>>,
}

fn transport(e: reqwest::Error) -> ModelError {
    ModelError::Transport(e.to_string())
}

impl RemoteModel {
    /// Checks health and fetches the vocabulary. The BOS id defaults to the
    /// special token `<s>` or `<bos>` when the vocabulary has one.
    pub fn connect(url: &str) -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(transport)?;
        let base = url.trim_end_matches('/').to_string();
        let health: HealthResponse = Self::get(&client, &format!("{base}/v1/health"))?;
        if health.status != "ok" {
            return Err(ModelError::Protocol(format!(
                "bridge status {:?}",
                health.status
            )));
        }
        let resp = client
            .get(format!("{base}/v1/vocab"))
            .send()
            .map_err(transport)?;
        let body = Self::check(resp)?.text().map_err(transport)?;
        let vocab = VocabFile::from_json_str(&body)
            .map_err(|e| ModelError::Protocol(format!("vocab: {e}")))?;
        let bos = ["<s>", "<bos>"]
            .iter()
            .filter_map(|s| vocab.vocab.id(s))
            .find(|&id| vocab.vocab.is_special(id));
        Ok(Self {
            base,
            client,
            vocab,
            bos,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_bos(mut self, bos: Option<TokenId>) -> Self {
        self.bos = bos;
        self
    }

    /// The vocabulary served by the bridge.
    pub fn vocab_file(&self) -> &VocabFile {
        &self.vocab
    }

    pub fn url(&self) -> &str {
        &self.base
    }

    /// Canonical ids of `text` as the bridge's own tokenizer encodes it.
    pub fn canonical(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        let r: CanonicalResponse = self.post("/v1/canonical", &CanonicalRequest { text })?;
        Ok(r.ids)
    }

    fn check(resp: reqwest::blocking::Response) -> Result<reqwest::blocking::Response, ModelError> {
        let status = resp.status();
        if status.is_success() {
            Ok(resp)
        } else {
            let body = resp.text().unwrap_or_default();
            Err(ModelError::Protocol(format!("HTTP {status}: {body}")))
        }
    }

    fn get<T: for<'de> Deserialize<'de>>(
        client: &reqwest::blocking::Client,
        url: &str,
    ) -> Result<T, ModelError> {
        let resp = client.get(url).send().map_err(transport)?;
        Self::check(resp)?
            .json()
            .map_err(|e| ModelError::Protocol(e.to_string()))
    }

    fn post<B: Serialize, T: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ModelError> {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(transport)?;
        decode(&Self::check(resp)?.text().map_err(transport)?)
    }

    fn expect_len(&self, got: &[f64], candidates: Option<&[TokenId]>) -> Result<(), ModelError> {
        let want = candidates.map_or(self.vocab_size(), <[TokenId]>::len);
        if got.len() == want {
            Ok(())
        } else {
            Err(ModelError::Protocol(format!(
                "expected {want} logprobs, got {}",
                got.len()
            )))
        }
    }
}

impl ScoringModel for RemoteModel {
    fn vocab_size(&self) -> usize {
        self.vocab.vocab.len()
    }

    fn next_logprobs(
        &self,
        prefix: &[TokenId],
        candidates: Option<&[TokenId]>,
    ) -> Result<Vec<f64>, ModelError> {
        let key = Query {
            prefix: prefix.to_vec(),
            candidates: candidates.map(<[TokenId]>::to_vec),
        };
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        check_ids(prefix, self.vocab_size())?;
        if let Some(c) = candidates {
            check_ids(c, self.vocab_size())?;
        }
        let r: LogprobsResponse = self.post(
            "/v1/logprobs",
            &LogprobsRequest {
                prefix_ids: prefix,
                candidate_ids: candidates,
            },
        )?;
        self.expect_len(&r.logprobs, candidates)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, r.logprobs.clone());
        Ok(r.logprobs)
    }

    fn next_logprobs_batch(&self, queries: &[Query]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out: Vec<Option<Vec<f64>>> = {
            let cache = self.cache.lock().expect("cache lock");
            queries.iter().map(|q| cache.get(q).cloned()).collect()
        };
        let missing: Vec<usize> = (0..queries.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let mut batch = Vec::with_capacity(missing.len());
            for &i in &missing {
                let q = &queries[i];
                check_ids(&q.prefix, self.vocab_size())?;
                if let Some(c) = &q.candidates {
                    check_ids(c, self.vocab_size())?;
                }
                batch.push(LogprobsRequest {
                    prefix_ids: &q.prefix,
                    candidate_ids: q.candidates.as_deref(),
                });
            }
            let r: BatchResponse = self.post("/v1/logprobs", &BatchRequest { batch })?;
            if r.batch.len() != missing.len() {
                return Err(ModelError::Protocol(format!(
                    "batch of {} answered with {} results",
                    missing.len(),
                    r.batch.len()
                )));
            }
            let mut cache = self.cache.lock().expect("cache lock");
            for (&i, res) in missing.iter().zip(r.batch) {
                self.expect_len(&res.logprobs, queries[i].candidates.as_deref())?;
                cache.insert(queries[i].clone(), res.logprobs.clone());
                out[i] = Some(res.logprobs);
            }
        }
        Ok(out.into_iter().map(|o| o.expect("filled")).collect())
    }

    fn bos_id(&self) -> Option<TokenId> {
        self.bos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probabilities_decode_as_negative_infinity() {
        let r: BatchResponse =
            decode(r#"{"batch": [{"logprobs": [-0.5, null, -Infinity]}]}"#).unwrap();
        assert_eq!(
            r.batch[0].logprobs,
            [-0.5, f64::NEG_INFINITY, f64::NEG_INFINITY]
        );
    }
}
