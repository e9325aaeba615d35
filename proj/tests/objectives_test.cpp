#include <gtest/gtest.h>

#include <filesystem>

#include "gmu/objectives.hpp"
#include "test_util.hpp"

using namespace gmu;

TEST(WblLoss, HandComputedValues) {
  // l=[1,0], s=[0.9,0.9]: N_b=2, alpha+ = alpha- = 2
  // -> -1/2 (2 ln 0.9 + 2 ln 0.1) = 2.40795...
  Vec l(2), s(2);
  l << 1, 0;
  s << 0.9, 0.9;
  ad::Tape t;
  const double v = t.value(wbl_loss_tape(t, t.constant(Mat(s)), l, 0.5))(0, 0);
  EXPECT_NEAR(v, -(std::log(0.9) + std::log(0.1)), 1e-12);
  EXPECT_NEAR(v, 2.40795, 1e-5);

  s << 0.9, 0.1;
  ad::Tape t2;
  const double v2 = t2.value(wbl_loss_tape(t2, t2.constant(Mat(s)), l, 0.5))(0, 0);
  EXPECT_NEAR(v2, -2.0 * std::log(0.9), 1e-12);
  EXPECT_NEAR(v2, 0.2107, 1e-4);
}

TEST(WblLoss, PerfectPredictionsNearZeroAndDegenerateError) {
  Vec l(4), s(4);
  l << 1, 1, 0, 0;
  s << 1.0 - 1e-9, 1.0 - 1e-9, 1e-9, 1e-9;
  ad::Tape t;
  EXPECT_LT(t.value(wbl_loss_tape(t, t.constant(Mat(s)), l, 0.5))(0, 0), 1e-5);

  Vec all_pos = Vec::Ones(4);
  ad::Tape t2;
  EXPECT_THROW(wbl_loss_tape(t2, t2.constant(Mat(s)), all_pos, 0.5), DataError);
  Vec all_neg = Vec::Zero(4);
  ad::Tape t3;
  EXPECT_THROW(wbl_loss_tape(t3, t3.constant(Mat(s)), all_neg, 0.5), DataError);
}

TEST(WblLoss, BatchPermutationInvariant) {
  Rng rng(3);
  Vec l(6), s(6);
  for (int i = 0; i < 6; ++i) {
    l[i] = i < 2 ? 1.0 : 0.0;
    s[i] = rng.next_uniform(0.05, 0.95);
  }
  const double base = loss_bl(s, s, l, l, 0.5);
  // rotate
  Vec l2(6), s2(6);
  for (int i = 0; i < 6; ++i) {
    l2[i] = l[(i + 2) % 6];
    s2[i] = s[(i + 2) % 6];
  }
  EXPECT_NEAR(loss_bl(s2, s2, l2, l2, 0.5), base, 1e-12);
}

TEST(CeLoss, AnalyticValues) {
  // softmax prob of target 0.5 -> ln 2
  Mat logits(1, 2);
  logits << 1.0, 1.0;
  EXPECT_NEAR(loss_ce(logits, {0}).first, std::log(2.0), 1e-12);
  // uniform logits over |V| = 4 -> ln 4
  Mat logits4 = Mat::Zero(1, 4);
  EXPECT_NEAR(loss_ce(logits4, {2}).first, std::log(4.0), 1e-12);
  // empty -> 0 with flag
  const auto empty = loss_ce(Mat(), {});
  EXPECT_EQ(empty.first, 0.0);
  EXPECT_FALSE(empty.second);
}

TEST(CeLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  const Mat logits = test::random_mat(3, 5, rng);
  const std::vector<int> targets{1, 4, 0};
  ad::Tape t;
  ad::Var lv = t.leaf(logits);
  t.backward(loss_ce_tape(t, lv, targets));
  const Mat g = t.grad(lv);
  const double h = 1e-6;
  for (long r = 0; r < 3; ++r) {
    for (long c = 0; c < 5; ++c) {
      Mat lp = logits, lm = logits;
      lp(r, c) += h;
      lm(r, c) -= h;
      const double numeric = (loss_ce(lp, targets).first - loss_ce(lm, targets).first) / (2 * h);
      EXPECT_NEAR(g(r, c), numeric, 1e-6);
    }
  }
}

TEST(TagLoss, AnalyticValues) {
  // single GT moment with all attention mass on it -> 0
  std::vector<Vec> w_a{Vec(3)}, w_hat{Vec(3)};
  w_a[0] << 1e-12, 1.0, 1e-12;
  w_hat[0] << 0, 1, 0;
  EXPECT_NEAR(loss_tag(w_a, w_hat), 0.0, 1e-9);
  // uniform over T=4 with 2 marked moments -> ln 4
  std::vector<Vec> u{Vec::Constant(4, 0.25)}, h{Vec(4)};
  h[0] = Vec(4);
  h[0] << 1, 0, 0, 1;
  EXPECT_NEAR(loss_tag(u, h), std::log(4.0), 1e-12);
}

TEST(TagLoss, NonNegativeAndSumsOverBatch) {
  Rng rng(6);
  std::vector<Vec> w_a, w_hat;
  for (int b = 0; b < 3; ++b) {
    Vec w(5);
    for (int i = 0; i < 5; ++i) w[i] = rng.next_uniform(0.01, 1.0);
    w /= w.sum();
    Vec h = Vec::Zero(5);
    h[static_cast<int>(rng.next_int(0, 4))] = 1;
    w_a.push_back(w);
    w_hat.push_back(h);
  }
  const double all = loss_tag(w_a, w_hat);
  EXPECT_GE(all, 0.0);
  double sum_parts = 0.0;
  for (int b = 0; b < 3; ++b) sum_parts += loss_tag({w_a[b]}, {w_hat[b]});
  EXPECT_NEAR(all, sum_parts, 1e-12);
  // all-zero ground truth is an error
  std::vector<Vec> bad{Vec::Zero(5)};
  EXPECT_THROW(loss_tag({w_a[0]}, bad), DataError);
}

TEST(BceLoss, AnalyticAndOracle) {
  // one valid cell, y = 1, p = 0.5 -> ln 2
  Vec p1(2), y1(2), v1(2);
  p1 << 0.5, 0.9;
  y1 << 1, 0;
  v1 << 1, 0;  // second cell invalid
  EXPECT_NEAR(loss_bce(p1, y1, v1), std::log(2.0), 1e-12);

  // p == y on {0,1} labels -> ~0 under clamping
  Vec p2(3), y2(3), v2 = Vec::Ones(3);
  p2 << 1 - 1e-9, 1e-9, 1 - 1e-9;
  y2 << 1, 0, 1;
  EXPECT_LT(loss_bce(p2, y2, v2), 1e-6);

  // random 3x3 flattened case vs a scalar loop oracle
  Rng rng(7);
  const int n = 9;
  Vec p(n), y(n), valid(n);
  for (int i = 0; i < n; ++i) {
    p[i] = rng.next_uniform(0.05, 0.95);
    y[i] = rng.next_uniform(0.0, 1.0);
    valid[i] = (i % 3 <= i / 3) ? 0.0 : 1.0;
  }
  double acc = 0.0;
  int cnt = 0;
  for (int i = 0; i < n; ++i) {
    if (valid[i] == 0.0) continue;
    acc += y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]);
    ++cnt;
  }
  EXPECT_NEAR(loss_bce(p, y, valid), -acc / cnt, 1e-12);
}

TEST(TotalLoss, EpochGatedBceWeight) {
  const LossBreakdown before = total_loss(1.0, 2.0, 3.0, 4.0, 8, 9);
  EXPECT_DOUBLE_EQ(before.bce_weight, 1.0);
  EXPECT_DOUBLE_EQ(before.total, 10.0);
  const LossBreakdown after = total_loss(1.0, 2.0, 3.0, 4.0, 9, 9);
  EXPECT_DOUBLE_EQ(after.bce_weight, 0.001);
  EXPECT_DOUBLE_EQ(after.total, 6.004);
  const LossBreakdown disabled = total_loss(1.0, 2.0, 3.0, 4.0, 100, -1);
  EXPECT_DOUBLE_EQ(disabled.bce_weight, 1.0);
  EXPECT_DOUBLE_EQ(disabled.total, 10.0);
}

TEST(Losses, NonNegativeOnRandomInputs) {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    Vec s(6), l(6);
    for (int i = 0; i < 6; ++i) {
      s[i] = rng.next_uniform(0.01, 0.99);
      l[i] = i < 3 ? 1.0 : 0.0;
    }
    EXPECT_GE(loss_bl(s, s, l, l, 0.5), 0.0);
    Vec y(6), v = Vec::Ones(6);
    for (int i = 0; i < 6; ++i) y[i] = rng.next_uniform(0.0, 1.0);
    EXPECT_GE(loss_bce(s, y, v), 0.0);
  }
}

TEST(LossCsvWriter, HeaderAndRows) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "gmu_losslog_test.csv").string();
  {
    LossCsvWriter w(path);
    w.row(0, 1, total_loss(1, 2, 3, 4, 0, 9));
  }
  const std::string bytes = test::read_file_bytes(path);
  EXPECT_NE(bytes.find("epoch,step,l_bl,l_ce,l_tag,l_bce,bce_weight,total"), std::string::npos);
  EXPECT_NE(bytes.find("0,1,1,2,3,4,1,10"), std::string::npos);
}
