#include <gtest/gtest.h>

#include "gmu/clip.hpp"
#include "test_util.hpp"

using namespace gmu;

namespace {

// independent gather-interpolate-max oracle for one sample
Mat dpgm_oracle(const Mat& v_f, int T, int N) {
  Mat out = Mat::Zero(static_cast<long>(T) * T, v_f.cols());
  for (int i = 0; i < T; ++i) {
    for (int j = i; j < T; ++j) {
      for (long c = 0; c < v_f.cols(); ++c) {
        double best = -std::numeric_limits<double>::infinity();
        for (int n = 0; n < N; ++n) {
          const double pos = N == 1 ? 0.5 * (i + j) : i + double(n) * (j - i) / (N - 1);
          const int lo = std::min(static_cast<int>(std::floor(pos)), T - 1);
          const int hi = std::min(lo + 1, T - 1);
          const double frac = pos - lo;
          best = std::max(best, (1.0 - frac) * v_f(lo, c) + frac * v_f(hi, c));
        }
        out(static_cast<long>(i) * T + j, c) = best;
      }
    }
  }
  return out;
}

}  // namespace

TEST(SamplingWeights, EndpointAndMidpointCases) {
  const SamplingWeights w2 = build_sampling_weights(8, 2);
  // proposal (1,3), N=2: samples at 1 and 3 exactly
  EXPECT_DOUBLE_EQ(w2.at(0, 1, 3, 1), 1.0);
  EXPECT_DOUBLE_EQ(w2.at(0, 1, 3, 2), 0.0);
  EXPECT_DOUBLE_EQ(w2.at(1, 1, 3, 3), 1.0);

  const SamplingWeights w3 = build_sampling_weights(8, 3);
  // proposal (0,1), N=3: middle sample at 0.5 splits evenly
  EXPECT_DOUBLE_EQ(w3.at(1, 0, 1, 0), 0.5);
  EXPECT_DOUBLE_EQ(w3.at(1, 0, 1, 1), 0.5);

  // degenerate proposal (2,2): every sample sits on moment 2
  for (int n = 0; n < 3; ++n) {
    EXPECT_DOUBLE_EQ(w3.at(n, 2, 2, 2), 1.0);
    EXPECT_DOUBLE_EQ(w3.at(n, 2, 2, 1), 0.0);
  }

  // single-sample schedule: midpoint of (1,2) is 1.5
  const SamplingWeights w1 = build_sampling_weights(4, 1);
  EXPECT_DOUBLE_EQ(w1.at(0, 1, 2, 1), 0.5);
  EXPECT_DOUBLE_EQ(w1.at(0, 1, 2, 2), 0.5);
}

TEST(SamplingWeights, RowStochasticWithAtMostTwoTaps) {
  for (int T = 2; T <= 8; ++T) {
    for (int N : {1, 2, 4}) {
      const SamplingWeights w = build_sampling_weights(T, N);
      for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) {
          for (int n = 0; n < N; ++n) {
            double sum = 0.0;
            int nonzero = 0;
            for (int t = 0; t < T; ++t) {
              const double v = w.at(n, i, j, t);
              EXPECT_GE(v, 0.0);
              sum += v;
              if (v != 0.0) ++nonzero;
            }
            if (j >= i) {
              EXPECT_NEAR(sum, 1.0, 1e-9) << "T=" << T << " N=" << N;
              EXPECT_LE(nonzero, 2);
            } else {
              EXPECT_EQ(sum, 0.0);
            }
          }
        }
      }
    }
  }
}

TEST(Dpgm, ConstantRowsGiveConstantCells) {
  const int T = 5;
  Mat v_f(T, 3);
  for (int i = 0; i < T; ++i) v_f.row(i) << 0.3, -1.2, 2.0;
  const SamplingWeights w = build_sampling_weights(T, 4);
  const Mat m_v = dpgm(w, v_f);
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j)
      for (int c = 0; c < 3; ++c)
        EXPECT_NEAR(m_v(i * T + j, c), j >= i ? v_f(0, c) : 0.0, 1e-12);
}

TEST(Dpgm, OneHotRowsGiveElementwiseUnionAtEndpoints) {
  // T=4, N=2: endpoint samples make cell (i,j) = e_i max e_j elementwise
  const int T = 4;
  const Mat v_f = Mat::Identity(T, T);
  const SamplingWeights w = build_sampling_weights(T, 2);
  const Mat m_v = dpgm(w, v_f);
  for (int i = 0; i < T; ++i) {
    for (int j = i; j < T; ++j) {
      for (int c = 0; c < T; ++c) {
        const double want = (c == i || c == j) ? 1.0 : 0.0;
        EXPECT_NEAR(m_v(i * T + j, c), want, 1e-12) << i << "," << j << "," << c;
      }
    }
  }
}

TEST(Dpgm, MatchesBruteForceOracle) {
  Rng rng(4);
  for (int T : {2, 5, 8}) {
    for (int N : {1, 2, 4}) {
      const Mat v_f = test::random_mat(T, 6, rng);
      const SamplingWeights w = build_sampling_weights(T, N);
      const Mat got = dpgm(w, v_f);
      const Mat want = dpgm_oracle(v_f, T, N);
      EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Dpgm, GradientRoutesThroughArgmax) {
  Rng rng(5);
  const int T = 4;
  const Mat v_f = test::random_mat(T, 3, rng);
  const SamplingWeights w = build_sampling_weights(T, 2);
  auto value = [&](const Mat& v) {
    ad::Tape t;
    return t.value(t.sum(dpgm_tape(t, t.constant(v), w, 1)))(0, 0);
  };
  ad::Tape t;
  ad::Var leaf = t.leaf(v_f);
  t.backward(t.sum(dpgm_tape(t, leaf, w, 1)));
  const Mat g = t.grad(leaf);
  const double h = 1e-6;
  for (long r = 0; r < v_f.rows(); ++r) {
    for (long c = 0; c < v_f.cols(); ++c) {
      Mat vp = v_f, vm = v_f;
      vp(r, c) += h;
      vm(r, c) -= h;
      EXPECT_NEAR(g(r, c), (value(vp) - value(vm)) / (2 * h), 1e-6);
    }
  }
}

TEST(ConvStack, PaperScheduleKeepsSpatialSize) {
  // kappa_e = 8 at T = 16: +2*16-4 on the first layer, then 7 times -4
  EXPECT_EQ(first_layer_padding(8), 16);
  ParamStore store;
  Rng rng(6);
  register_conv_stack(store, "early", 8, 8, 2, 2, rng);
  register_conv_stack(store, "late", 9, 8, 2, 1, rng);
  const int T = 16, B = 1;
  const Mat x = test::random_mat(T * T, 2, rng, 0.1);
  ad::Tape t;
  TapeParams P(t, store);
  const ad::Var early = conv_stack_tape(t, P, "early", t.constant(x), B, T, 8, 8);
  EXPECT_EQ(t.value(early).rows(), T * T);
  EXPECT_EQ(t.value(early).cols(), 2);
  const ad::Var late = conv_stack_tape(t, P, "late", t.constant(x), B, T, 9, 8);
  EXPECT_EQ(t.value(late).rows(), T * T);
  EXPECT_EQ(t.value(late).cols(), 1);
}

TEST(ConvStack, SingleOneByOneLayerMatchesScalarOracle) {
  ParamStore store;
  Rng rng(7);
  register_conv_stack(store, "late", 1, 0, 3, 1, rng);
  Mat w(3, 1), b(1, 1);
  w << 0.5, -1.0, 0.25;
  b << 0.1;
  store.at("late0_w") = w;
  store.at("late0_b") = b;
  const int T = 2;
  const Mat x = test::random_mat(T * T, 3, rng);
  ad::Tape t;
  TapeParams P(t, store);
  const Mat y = t.value(conv_stack_tape(t, P, "late", t.constant(x), 1, T, 1, 0));
  for (int cell = 0; cell < T * T; ++cell) {
    const double want = x(cell, 0) * 0.5 - x(cell, 1) + 0.25 * x(cell, 2) + 0.1;
    EXPECT_NEAR(y(cell, 0), want, 1e-12);
  }
}

TEST(ClipGenerator, IdentityEarlyConvExtractsDominantCell) {
  const int T = 3, d = 2;
  ParamStore store;
  Rng rng(8);
  register_clip_params(store, "clip_", d, 1, 2, true, rng);
  // EarlyConv identity: kernel-5 center tap = identity, everything else 0
  Mat w = Mat::Zero(5 * 5 * d, d);
  const int center = (2 * 5 + 2) * d;
  for (int c = 0; c < d; ++c) w(center + c, c) = 1.0;
  store.at("clip_early0_w") = w;
  store.at("clip_early0_b").setZero();

  Mat m_v = Mat::Zero(T * T, d);
  m_v(0 * T + 2, 0) = 5.0;  // dominant cell (0,2)
  m_v(0 * T + 2, 1) = 7.0;
  m_v(1 * T + 2, 0) = 1.0;
  ad::Tape t;
  TapeParams P(t, store);
  const Mat f_c = t.value(
      clip_generator_tape(t, P, "clip_", t.constant(m_v), t.constant(Mat::Ones(1, d)), 1, T, 1));
  EXPECT_NEAR(f_c(0, 0), 5.0, 1e-12);
  EXPECT_NEAR(f_c(0, 1), 7.0, 1e-12);

  // s = 0 kills the query
  ad::Tape t2;
  TapeParams P2(t2, store);
  const Mat f_c0 = t2.value(
      clip_generator_tape(t2, P2, "clip_", t2.constant(m_v), t2.constant(Mat::Zero(1, d)), 1, T, 1));
  EXPECT_TRUE((f_c0.array() == 0.0).all());
}

TEST(ClipScores, ZeroQueryGivesConstantValidCells) {
  const int T = 4, d = 3;
  ParamStore store;
  Rng rng(9);
  register_clip_params(store, "clip_", d, 1, 3, true, rng);
  const Mat m_v = test::random_mat(T * T, d, rng);
  ad::Tape t;
  TapeParams P(t, store);
  const Mat s = t.value(
      clip_scores_tape(t, P, "clip_", t.constant(m_v), t.constant(Mat::Zero(1, d)), 1, T, 3));
  double first_valid = -1;
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < T; ++j) {
      const double v = s(i * T + j, 0);
      if (j < i) {
        EXPECT_EQ(v, 0.0);
      } else {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        if (first_valid < 0) first_valid = v;
        EXPECT_NEAR(v, first_valid, 1e-12);
      }
    }
  }
}

TEST(ClipScores, RangeContractOnRandomInput) {
  const int T = 5, d = 4;
  ParamStore store;
  Rng rng(10);
  register_clip_params(store, "clip_", d, 2, 3, true, rng);
  const Mat m_v = test::random_mat(T * T, d, rng);
  const Mat q = test::random_mat(1, d, rng);
  ad::Tape t;
  TapeParams P(t, store);
  const Mat s =
      t.value(clip_scores_tape(t, P, "clip_", t.constant(m_v), t.constant(q), 1, T, 3));
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j) {
      const double v = s(i * T + j, 0);
      if (j < i) EXPECT_EQ(v, 0.0);
      else {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
}

TEST(ClipScores, ArgmaxInvariantUnderFinalBiasShift) {
  const int T = 4, d = 2;
  ParamStore store;
  Rng rng(11);
  register_clip_params(store, "clip_", d, 1, 2, true, rng);
  const Mat m_v = test::random_mat(T * T, d, rng);
  const Mat q = test::random_mat(1, d, rng);
  auto argmax_of = [&](ParamStore& st) {
    ad::Tape t;
    TapeParams P(t, st);
    const Mat s = t.value(clip_scores_tape(t, P, "clip_", t.constant(m_v), t.constant(q), 1, T, 2));
    int best = 0;
    for (int k = 1; k < T * T; ++k)
      if (s(k, 0) > s(best, 0)) best = k;
    return best;
  };
  const int before = argmax_of(store);
  store.at("clip_late1_b").array() += 2.5;
  EXPECT_EQ(argmax_of(store), before);
}

TEST(ClipPath, GradientsThroughBothStacks) {
  const int T = 3, d = 2, B = 1;
  ParamStore store;
  Rng rng(12);
  register_clip_params(store, "clip_", d, 1, 2, true, rng);
  const Mat v_f = test::random_mat(T, d, rng).cwiseAbs();
  const SamplingWeights w = build_sampling_weights(T, 2);
  const Mat s_sem = test::random_mat(1, d, rng);

  auto loss_value = [&]() {
    ad::Tape t;
    TapeParams P(t, store);
    ad::Var m_v = dpgm_tape(t, t.constant(v_f), w, B);
    ad::Var f_c = clip_generator_tape(t, P, "clip_", m_v, t.constant(s_sem), B, T, 1);
    ad::Var s_c = clip_scores_tape(t, P, "clip_", m_v, f_c, B, T, 2);
    return t.value(t.sum(s_c))(0, 0);
  };
  ad::Tape t;
  TapeParams P(t, store);
  ad::Var m_v = dpgm_tape(t, t.constant(v_f), w, B);
  ad::Var f_c = clip_generator_tape(t, P, "clip_", m_v, t.constant(s_sem), B, T, 1);
  ad::Var s_c = clip_scores_tape(t, P, "clip_", m_v, f_c, B, T, 2);
  t.backward(t.sum(s_c));
  const auto rep = test::grad_check(store, loss_value, P.collect_grads(), 6);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst_param;
}
