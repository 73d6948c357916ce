// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "resdec/simulator.hpp"
#include "resdec/trace.hpp"

using namespace resdec;

namespace {

std::string dump(const Trace& t) {
  std::ostringstream os;
  write_trace(t, os);
  return os.str();
}

Trace load(const std::string& text) {
  std::istringstream is(text);
  return read_trace(is);
}

const char* kHeader = R"({"format":"resdec-trace/1","vocab_size":4,"top_m":2,"label":null,"answer_step":null,"source":"t"})";

}  // namespace

TEST(TraceIo, RoundTripGenerated) {
  for (std::uint64_t seed : {0u, 1u, 77u}) {
    const Trace t = generate_trace(SyntheticTaskSpec{}, seed);
    EXPECT_EQ(load(dump(t)), t);
  }
}

TEST(TraceIo, RoundTripWithPrefillAndChosen) {
  Trace t;
  t.vocab_size = 5;
  t.top_m = 3;
  t.source = "hand";
  t.records.push_back(make_record(-1, Origin::prefill, {{1, -0.1}, {4, -3.0}}, 4));
  t.records.push_back(make_record(0, Origin::prefill, {{4, -0.2}, {0, -2.0}}, 2));
  t.records.push_back(make_record(1, Origin::generated, {{2, -0.05}}));
  t.answer_step = 1;
  t.label = 2;
  const Trace back = load(dump(t));
  EXPECT_EQ(back, t);
}

TEST(TraceIo, HeaderFieldOrder) {
  const std::string text = dump(generate_trace(SyntheticTaskSpec{}, 1));
  EXPECT_EQ(text.rfind(R"({"format":"resdec-trace/1","vocab_size":16,"top_m":12,"label":3,"answer_step":9,)", 0), 0u);
  EXPECT_NE(text.find(R"("origin":"gen")"), std::string::npos);
  EXPECT_EQ(text.back(), '\n');
}

TEST(TraceIo, TruncatedFileReportsLine) {
  std::string text = dump(generate_trace(SyntheticTaskSpec{}, 2));
  // Cut the 4th line (3rd record) in half.
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = text.find('\n', pos) + 1;
  text = text.substr(0, pos + 20);
  try {
    load(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(TraceIo, OutOfOrderStepsRejected) {
  const std::string text = std::string(kHeader) + "\n" + R"({"step":2,"origin":"gen","topk":[[0,-0.1]],"chosen":null})" +
                           "\n" + R"({"step":1,"origin":"gen","topk":[[0,-0.1]],"chosen":null})" + "\n";
  EXPECT_THROW(load(text), OrderingError);
}

TEST(TraceIo, MalformedLines) {
  const auto bad_line = [](const std::string& rec) {
    try {
      load(std::string(kHeader) + "\n" + rec + "\n");
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(bad_line("not json"), 2u);
  EXPECT_EQ(bad_line(R"({"step":1,"origin":"gen","chosen":null})"), 2u);
  EXPECT_EQ(bad_line(R"({"step":1,"origin":"x","topk":[[0,-0.1]],"chosen":null})"), 2u);
  EXPECT_EQ(bad_line(R"({"step":1,"origin":"gen","topk":[[0,-2.0],[1,-0.1]],"chosen":null})"), 2u);
  EXPECT_EQ(bad_line(R"({"step":1,"origin":"gen","topk":[[0,-0.1],[1,-0.2],[2,-3]],"chosen":null})"), 2u);
  EXPECT_EQ(bad_line(R"({"step":1,"origin":"gen","topk":[[0]],"chosen":null})"), 2u);
  EXPECT_EQ(bad_line(R"({"step":1,"origin":"gen","topk":[],"chosen":null})"), 2u);
}

TEST(TraceIo, BadHeader) {
  EXPECT_THROW(load(""), ParseError);
  EXPECT_THROW(load(R"({"format":"other/1","vocab_size":4,"top_m":2,"label":null,"answer_step":null,"source":"t"})"),
               ParseError);
  EXPECT_THROW(load(R"({"format":"resdec-trace/1","top_m":2,"label":null,"answer_step":null,"source":"t"})"), ParseError);
}

TEST(TraceIo, TokenOutsideVocabRejected) {
  const std::string text = std::string(kHeader) + "\n" + R"({"step":1,"origin":"gen","topk":[[9,-0.1]],"chosen":null})" + "\n";
  EXPECT_THROW(load(text), ParseError);
}

TEST(Materialize, FillsUnretainedTokens) {
  const StepRecord r = make_record(1, Origin::generated, {{2, -0.1}, {0, -3.0}});
  const auto v = materialize(r, 4);
  EXPECT_TRUE(v.is_dense());
  EXPECT_DOUBLE_EQ(v[2], -0.1);
  EXPECT_DOUBLE_EQ(v[1], -4.0);
  EXPECT_DOUBLE_EQ(v[3], -4.0);
}
