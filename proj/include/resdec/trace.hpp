// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// resdec-trace/1: one JSON object per line, LF endings.
//
//   {"format":"resdec-trace/1","vocab_size":16,"top_m":12,"label":3,"answer_step":9,"source":"sim"}
//   {"step":1,"origin":"gen","topk":[[3,-0.12],[7,-3.1]],"chosen":null}
//
// Log-probabilities are log-softmax normalized nats, sorted descending, at
// most top_m per line. Prefill lines use "origin":"prefill" and steps <= 0.

#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "resdec/errors.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"

namespace resdec {

inline constexpr const char* kTraceFormat = "resdec-trace/1";

struct Trace {
  std::size_t vocab_size = 0;
  std::size_t top_m = 0;
  std::string source;
  std::optional<TokenId> label;
  std::optional<std::int64_t> answer_step;
  std::vector<StepRecord> records;

  const StepRecord* find_step(std::int64_t step) const noexcept {
    for (const auto& r : records) {
      if (r.step_index == step) return &r;
    }
    return nullptr;
  }

  std::size_t generated_count() const noexcept {
    std::size_t n = 0;
    for (const auto& r : records) n += r.origin == Origin::generated;
    return n;
  }

  void validate() const {
    if (vocab_size == 0) throw DimensionError("trace vocab_size must be positive");
    std::optional<std::int64_t> prev;
    for (const auto& r : records) {
      r.validate();
      if (prev && r.step_index <= *prev) {
        throw OrderingError("trace step " + std::to_string(r.step_index) + " follows step " + std::to_string(*prev));
      }
      prev = r.step_index;
      if (r.entries.size() > top_m) throw DimensionError("record longer than top_m");
      for (const auto& e : r.entries) {
        if (static_cast<std::size_t>(e.token) >= vocab_size) throw DimensionError("token id outside the vocabulary");
      }
    }
    if (label && (*label < 0 || static_cast<std::size_t>(*label) >= vocab_size)) {
      throw DimensionError("trace label outside the vocabulary");
    }
    if (answer_step) {
      const StepRecord* r = find_step(*answer_step);
      if (r == nullptr || r->origin != Origin::generated) throw DimensionError("answer_step does not name a generated step");
    }
  }

  friend bool operator==(const Trace&, const Trace&) = default;
};

/// Dense full-vocabulary logits of a record; unretained tokens get the fill value.
inline LogitVector materialize(const StepRecord& rec, std::size_t vocab_size) {
  std::vector<double> scores(vocab_size, rec.fill_logit());
  for (const auto& e : rec.entries) scores[static_cast<std::size_t>(e.token)] = e.logit;
  return LogitVector::dense(std::move(scores));
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson record_to_json(const StepRecord& r) {
  ojson topk = ojson::array();
  for (const auto& e : r.entries) topk.push_back(ojson::array({e.token, e.logit}));
  ojson j;
  j["step"] = r.step_index;
  j["origin"] = r.origin == Origin::prefill ? "prefill" : "gen";
  j["topk"] = std::move(topk);
  j["chosen"] = r.chosen ? ojson(*r.chosen) : ojson(nullptr);
  return j;
}

template <typename T>
T required(const ojson& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(std::string("field '") + key + "' has the wrong type", line);
  }
}

template <typename T>
std::optional<T> nullable(const ojson& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line);
  if (j.at(key).is_null()) return std::nullopt;
  return required<T>(j, key, line);
}

inline std::vector<TokenLogit> parse_topk(const ojson& arr, std::size_t line) {
  if (!arr.is_array()) throw ParseError("'topk' must be an array", line);
  std::vector<TokenLogit> out;
  out.reserve(arr.size());
  for (const auto& pair : arr) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number()) {
      throw ParseError("'topk' entries must be [token_id, logprob]", line);
    }
    out.push_back({pair[0].get<TokenId>(), pair[1].get<double>()});
  }
  return out;
}

inline ojson parse_line(const std::string& text, std::size_t line) {
  try {
    ojson j = ojson::parse(text);
    if (!j.is_object()) throw ParseError("expected a JSON object", line);
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
}

}  // namespace detail

inline void write_trace(const Trace& trace, std::ostream& out) {
  detail::ojson header;
  header["format"] = kTraceFormat;
  header["vocab_size"] = trace.vocab_size;
  header["top_m"] = trace.top_m;
  header["label"] = trace.label ? detail::ojson(*trace.label) : detail::ojson(nullptr);
  header["answer_step"] = trace.answer_step ? detail::ojson(*trace.answer_step) : detail::ojson(nullptr);
  header["source"] = trace.source;
  out << header.dump() << '\n';
  for (const auto& r : trace.records) out << detail::record_to_json(r).dump() << '\n';
}

inline void write_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_trace(trace, out);
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Trace read_trace(std::istream& in) {
  Trace trace;
  std::string text;
  std::size_t line = 0;
  if (!std::getline(in, text)) throw ParseError("missing header", 1);
  ++line;
  const auto header = detail::parse_line(text, line);
  if (detail::required<std::string>(header, "format", line) != kTraceFormat) {
    throw ParseError("unsupported format, expected " + std::string(kTraceFormat), line);
  }
  trace.vocab_size = detail::required<std::size_t>(header, "vocab_size", line);
  trace.top_m = detail::required<std::size_t>(header, "top_m", line);
  trace.label = detail::nullable<TokenId>(header, "label", line);
  trace.answer_step = detail::nullable<std::int64_t>(header, "answer_step", line);
  trace.source = detail::required<std::string>(header, "source", line);

  while (std::getline(in, text)) {
    ++line;
    if (text.empty() && in.peek() == std::char_traits<char>::eof()) break;
    const auto j = detail::parse_line(text, line);
    StepRecord rec;
    rec.step_index = detail::required<std::int64_t>(j, "step", line);
    const auto origin = detail::required<std::string>(j, "origin", line);
    if (origin == "prefill") {
      rec.origin = Origin::prefill;
    } else if (origin == "gen") {
      rec.origin = Origin::generated;
    } else {
      throw ParseError("origin must be \"prefill\" or \"gen\"", line);
    }
    if (!j.contains("topk")) throw ParseError("missing field 'topk'", line);
    rec.entries = detail::parse_topk(j.at("topk"), line);
    rec.chosen = detail::nullable<TokenId>(j, "chosen", line);
    if (rec.entries.empty()) throw ParseError("empty 'topk'", line);
    rec.floor_logit = rec.entries.back().logit;
    if (!trace.records.empty() && rec.step_index <= trace.records.back().step_index) {
      throw OrderingError("line " + std::to_string(line) + ": step " + std::to_string(rec.step_index) +
                          " follows step " + std::to_string(trace.records.back().step_index));
    }
    try {
      rec.validate();
    } catch (const OrderingError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), line);
    }
    if (rec.entries.size() > trace.top_m) throw ParseError("topk longer than top_m", line);
    trace.records.push_back(std::move(rec));
  }
  try {
    trace.validate();
  } catch (const OrderingError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what(), 0);
  }
  return trace;
}

inline Trace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_trace(in);
}

}  // namespace resdec
