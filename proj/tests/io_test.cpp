#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gmu/io.hpp"
#include "test_util.hpp"

using namespace gmu;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gmu_io_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Mat float_valued_random(long rows, long cols, Rng& rng) {
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      m(r, c) = static_cast<double>(static_cast<float>(rng.next_normal()));
  return m;
}

}  // namespace

TEST(Vocabulary, ReservedIdsAndLookup) {
  io::Vocabulary v;
  EXPECT_EQ(v.lookup("<pad>"), 0);
  EXPECT_EQ(v.lookup("<mask>"), 1);
  EXPECT_EQ(v.lookup("<unk>"), 2);
  const int id = v.add("door");
  EXPECT_EQ(v.lookup("door"), id);
  EXPECT_EQ(v.add("door"), id);
  EXPECT_EQ(v.lookup("window"), io::Vocabulary::kUnk);
}

TEST(Vocabulary, SaveLoadStable) {
  const fs::path dir = temp_dir("vocab");
  io::Vocabulary v;
  v.add("person");
  v.add("opens");
  v.add("door");
  v.save(dir / "v.json");
  const io::Vocabulary w = io::Vocabulary::load(dir / "v.json");
  EXPECT_EQ(w.size(), v.size());
  for (int i = 0; i < v.size(); ++i) EXPECT_EQ(w.token(i), v.token(i));
}

TEST(Tokenize, LowercaseAndTrailingPunctuation) {
  const auto toks = io::tokenize("Person opens the Door.");
  ASSERT_EQ(toks.size(), 4u);
  EXPECT_EQ(toks[0], "person");
  EXPECT_EQ(toks[3], "door");
}

TEST(Annotations, CharadesLineParses) {
  const fs::path dir = temp_dir("ann1");
  {
    std::ofstream f(dir / "a.txt");
    f << "AB1 3.5 9.0##person opens door\n";
    f << "X 5 2##bad\n";
  }
  const auto res = io::load_annotations(dir / "a.txt", io::AnnotationFormat::kCharadesLines);
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.dropped, 1);
  EXPECT_EQ(res.records[0].video_id, "AB1");
  EXPECT_DOUBLE_EQ(res.records[0].gt.start, 3.5);
  EXPECT_DOUBLE_EQ(res.records[0].gt.end, 9.0);
  EXPECT_EQ(res.records[0].query, "person opens door");
}

TEST(Annotations, MalformedLineNamesLineNumber) {
  const fs::path dir = temp_dir("ann2");
  {
    std::ofstream f(dir / "a.txt");
    f << "AB1 3.5 9.0##ok line\n";
    f << "no separator here\n";
  }
  try {
    io::load_annotations(dir / "a.txt", io::AnnotationFormat::kCharadesLines);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Annotations, JsonLinesMissingKeyNamesLineNumber) {
  const fs::path dir = temp_dir("ann3");
  {
    std::ofstream f(dir / "a.jsonl");
    f << R"({"video_id":"v1","duration":16.0,"start":1.0,"end":2.0,"query":"do x"})" << "\n";
    f << R"({"video_id":"v2","duration":16.0,"start":1.0,"end":2.0})" << "\n";
  }
  try {
    io::load_annotations(dir / "a.jsonl", io::AnnotationFormat::kJsonLines);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos);
    EXPECT_NE(msg.find("query"), std::string::npos);
  }
}

TEST(Gmuf, RoundTripBitIdentical) {
  const fs::path dir = temp_dir("gmuf1");
  Rng rng(3);
  const Mat m = float_valued_random(7, 5, rng);
  io::save_features(dir / "v.gmuf", m);
  const io::VideoFeatureSequence seq = io::load_features(dir / "v.gmuf");
  EXPECT_EQ(seq.video_id, "v");
  ASSERT_EQ(seq.features.rows(), 7);
  ASSERT_EQ(seq.features.cols(), 5);
  EXPECT_TRUE((seq.features.array() == m.array()).all());
  // file-level round trip
  io::save_features(dir / "v2.gmuf", seq.features);
  EXPECT_EQ(test::read_file_bytes((dir / "v.gmuf").string()),
            test::read_file_bytes((dir / "v2.gmuf").string()));
}

TEST(Gmuf, TruncatedPayload) {
  const fs::path dir = temp_dir("gmuf2");
  {
    std::ofstream f(dir / "bad.gmuf", std::ios::binary);
    f.write("GMUF", 4);
    const uint32_t vals[3] = {1, 3, 4};  // declares 12 floats
    f.write(reinterpret_cast<const char*>(vals), 12);
    const float body[11] = {};  // one short
    f.write(reinterpret_cast<const char*>(body), sizeof(body));
  }
  try {
    io::load_features(dir / "bad.gmuf");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Gmuf, BadMagicAndNonFinite) {
  const fs::path dir = temp_dir("gmuf3");
  {
    std::ofstream f(dir / "magic.gmuf", std::ios::binary);
    f.write("NOPE", 4);
  }
  try {
    io::load_features(dir / "magic.gmuf");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  {
    std::ofstream f(dir / "nan.gmuf", std::ios::binary);
    f.write("GMUF", 4);
    const uint32_t vals[3] = {1, 1, 2};
    f.write(reinterpret_cast<const char*>(vals), 12);
    const float body[2] = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    f.write(reinterpret_cast<const char*>(body), sizeof(body));
  }
  try {
    io::load_features(dir / "nan.gmuf");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(Resample, IdentityAndMidpoint) {
  Rng rng(4);
  const Mat m = test::random_mat(4, 3, rng);
  EXPECT_TRUE((io::resample_moments(m, 4).array() == m.array()).all());

  Mat two = test::random_mat(2, 3, rng);
  const Mat three = io::resample_moments(two, 3);
  EXPECT_TRUE((three.row(0).array() == two.row(0).array()).all());
  EXPECT_TRUE((three.row(2).array() == two.row(1).array()).all());
  EXPECT_TRUE(three.row(1).isApprox(0.5 * (two.row(0) + two.row(1)), 1e-12));
}

TEST(Resample, FiveToThreePicksCoords024) {
  Rng rng(5);
  const Mat m = test::random_mat(5, 2, rng);
  const Mat r = io::resample_moments(m, 3);
  EXPECT_TRUE((r.row(0).array() == m.row(0).array()).all());
  EXPECT_TRUE((r.row(1).array() == m.row(2).array()).all());
  EXPECT_TRUE((r.row(2).array() == m.row(4).array()).all());
}

TEST(Resample, ConstantPreservedAndNoExtrapolation) {
  Rng rng(6);
  const Mat c = Mat::Constant(6, 3, 2.5);
  EXPECT_TRUE((io::resample_moments(c, 9).array() == 2.5).all());
  const Mat m = test::random_mat(7, 4, rng);
  const Mat r = io::resample_moments(m, 13);
  for (long col = 0; col < 4; ++col) {
    EXPECT_GE(r.col(col).minCoeff() + 1e-12, m.col(col).minCoeff());
    EXPECT_LE(r.col(col).maxCoeff() - 1e-12, m.col(col).maxCoeff());
  }
}

TEST(TokenizeAndMask, SingleTokenForcedAndEvalUnchanged) {
  io::Vocabulary v;
  v.add("jump");
  Rng rng(1);
  const io::QuerySample train = io::tokenize_and_mask("jump", v, rng, true);
  EXPECT_EQ(train.mask_index, 0);
  EXPECT_EQ(train.token_ids[0], io::Vocabulary::kMask);
  EXPECT_EQ(train.masked_original_id, v.lookup("jump"));
  Rng rng2(1);
  const io::QuerySample eval = io::tokenize_and_mask("jump high", v, rng2, false);
  EXPECT_EQ(eval.mask_index, -1);
  EXPECT_EQ(eval.token_ids[0], v.lookup("jump"));
  EXPECT_EQ(eval.token_ids[1], io::Vocabulary::kUnk);
  EXPECT_THROW(io::tokenize_and_mask("  ", v, rng2, true), DataError);
}

TEST(TokenizeAndMask, DeterministicForFixedSeed) {
  io::Vocabulary v;
  for (const char* w : {"person", "opens", "door"}) v.add(w);
  Rng a(99), b(99);
  const auto s1 = io::tokenize_and_mask("person opens door", v, a, true);
  const auto s2 = io::tokenize_and_mask("person opens door", v, b, true);
  EXPECT_EQ(s1.mask_index, s2.mask_index);
  EXPECT_EQ(s1.token_ids, s2.token_ids);
}

TEST(Synthetic, NoiseFreeOneHotsAndBounds) {
  const fs::path dir = temp_dir("synth1");
  const auto ds = io::make_synthetic_dataset(dir, 6, 12, 10, 5, 0.0, 42);
  const auto ann = io::load_annotations(ds.annotations_path, io::AnnotationFormat::kJsonLines);
  ASSERT_EQ(ann.records.size(), 6u);
  for (const auto& rec : ann.records) {
    EXPECT_GE(rec.gt.start, 0.0);
    EXPECT_LT(rec.gt.start, rec.gt.end);
    EXPECT_LE(rec.gt.end, rec.duration);
    const auto seq = io::load_features(ds.features_dir / (rec.video_id + ".gmuf"));
    for (long r = 0; r < seq.features.rows(); ++r) {
      EXPECT_NEAR(seq.features.row(r).sum(), 1.0, 1e-12);
      EXPECT_NEAR(seq.features.row(r).maxCoeff(), 1.0, 1e-12);
    }
  }
}

TEST(Synthetic, SameSeedByteIdentical) {
  const fs::path d1 = temp_dir("synth2a");
  const fs::path d2 = temp_dir("synth2b");
  const auto a = io::make_synthetic_dataset(d1, 5, 10, 8, 4, 0.05, 7);
  const auto b = io::make_synthetic_dataset(d2, 5, 10, 8, 4, 0.05, 7);
  EXPECT_EQ(test::read_file_bytes(a.annotations_path.string()),
            test::read_file_bytes(b.annotations_path.string()));
  EXPECT_EQ(test::read_file_bytes(a.vocab_path.string()),
            test::read_file_bytes(b.vocab_path.string()));
  for (int v = 0; v < 5; ++v) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth%04d.gmuf", v);
    EXPECT_EQ(test::read_file_bytes((a.features_dir / name).string()),
              test::read_file_bytes((b.features_dir / name).string()));
  }
  // different seed, different bytes
  const fs::path d3 = temp_dir("synth2c");
  const auto c = io::make_synthetic_dataset(d3, 5, 10, 8, 4, 0.05, 8);
  EXPECT_NE(test::read_file_bytes(a.annotations_path.string()),
            test::read_file_bytes(c.annotations_path.string()));
}

TEST(Batches, DeterministicPartitionCoversAll) {
  const auto b1 = io::make_batches(11, 4, 123, 2);
  const auto b2 = io::make_batches(11, 4, 123, 2);
  EXPECT_EQ(b1, b2);
  const auto b3 = io::make_batches(11, 4, 123, 3);
  EXPECT_NE(b1, b3);
  std::vector<int> seen(11, 0);
  size_t total = 0;
  for (const auto& batch : b1) {
    total += batch.size();
    for (size_t i : batch) ++seen[i];
  }
  EXPECT_EQ(total, 11u);
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(b1.size(), 3u);
  EXPECT_EQ(b1.back().size(), 3u);
}

TEST(Dataset, LoadsAndPrecomputesLabels) {
  const fs::path dir = temp_dir("ds1");
  const auto synth = io::make_synthetic_dataset(dir, 4, 16, 8, 4, 0.01, 9);
  const io::Vocabulary vocab = io::Vocabulary::load(synth.vocab_path);
  const io::Dataset ds = io::load_dataset(synth.features_dir, synth.annotations_path,
                                          io::AnnotationFormat::kJsonLines, vocab, 8, 0.5, 1.0, 30);
  ASSERT_EQ(ds.samples.size(), 4u);
  EXPECT_EQ(ds.T, 8);
  EXPECT_EQ(ds.d_i, 8);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(s.features.rows(), 8);
    EXPECT_EQ(s.grid.T, 8);
    EXPECT_DOUBLE_EQ(s.grid.duration, 16.0);
    EXPECT_EQ(s.boundary.l_start.size(), 8);
    EXPECT_EQ(s.tag.w_hat.size(), 8u);
    EXPECT_EQ(s.proposal.y.rows(), 8);
    EXPECT_GE(s.token_ids.size(), 2u);
  }
  EXPECT_THROW(io::load_dataset(dir / "nope", synth.annotations_path,
                                io::AnnotationFormat::kJsonLines, vocab, 8, 0.5, 1.0, 30),
               DataError);
}
