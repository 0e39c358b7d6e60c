#include "stg/constraints.hpp"
#include "stg/objective.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace stg;

namespace {

ModelConfig tiny(Variant v) {
  ModelConfig c = ModelConfig::toy();
  c.variant = v;
  c.T = 3;
  c.hidden = 3;
  c.embed_widths = {3, 2};
  c.f_dim = 2;
  c.z_dim = 2;
  c.prior_input = 2;
  c.head_widths = {3, 2};
  c.penalty_samples = 2;
  c.seed = 5;
  return c;
}

std::vector<Mat> random_steps(Rng& rng, std::size_t T, std::size_t batch, double spread = 1.0) {
  std::vector<Mat> steps;
  for (std::size_t t = 0; t < T; ++t) steps.push_back(spread * gaussian_noise(rng, batch, 2));
  return steps;
}

Trajectories random_corpus(Rng& rng, std::size_t n, std::size_t T) {
  Trajectories out;
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory t;
    t.id = std::to_string(i);
    Point p{g(rng), g(rng)};
    for (std::size_t k = 0; k < T; ++k) {
      t.points.push_back(p);
      p = {p.x + 0.2 + 0.05 * g(rng), p.y + 0.05 * g(rng)};
    }
    out.push_back(std::move(t));
  }
  return out;
}

double log_normal(double x, double mu, double sigma) {
  const double d = (x - mu) / sigma;
  return -0.5 * d * d - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST(GaussianKl, ClosedFormCases) {
  const std::vector<double> zero{0.0}, one{1.0};
  EXPECT_DOUBLE_EQ(gaussian_kl(zero, one, zero, one), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_kl(one, one, zero, one), 0.5);
  const std::vector<double> bad{0.0};
  EXPECT_THROW(gaussian_kl(zero, bad, zero, one), std::invalid_argument);
  const std::vector<double> neg{-1.0};
  EXPECT_THROW(gaussian_kl(zero, one, zero, neg), std::invalid_argument);
}

TEST(GaussianKl, MatchesMonteCarloLogRatio) {
  const std::vector<double> mu1{0.3, -0.5}, s1{0.8, 1.5}, mu2{0.0, 0.2}, s2{1.2, 0.9};
  const double closed = gaussian_kl(mu1, s1, mu2, s2);
  Rng rng(12);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int n = 100000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 2; ++d) {
      const double x = mu1[d] + s1[d] * n01(rng);
      acc += log_normal(x, mu1[d], s1[d]) - log_normal(x, mu2[d], s2[d]);
    }
  const double mc = acc / n;
  EXPECT_LT(std::abs(mc - closed) / closed, 0.01) << "closed " << closed << " mc " << mc;
}

TEST(GaussianKl, TensorFormAgreesWithScalarForm) {
  Rng rng(4);
  Mat mu1 = gaussian_noise(rng, 3, 4), mu2 = gaussian_noise(rng, 3, 4);
  Mat s1 = gaussian_noise(rng, 3, 4).array().exp(), s2 = gaussian_noise(rng, 3, 4).array().exp();
  Tape tape;
  const Mat kl = gaussian_kl(tape.leaf(mu1), tape.leaf(s1), tape.leaf(mu2), tape.leaf(s2)).value();
  const Mat unit = unit_gaussian_kl(tape.leaf(mu1), tape.leaf(s1)).value();
  for (Eigen::Index r = 0; r < 3; ++r) {
    std::vector<double> a(4), b(4), c(4), d(4), z(4, 0.0), o(4, 1.0);
    for (Eigen::Index j = 0; j < 4; ++j) a[j] = mu1(r, j), b[j] = s1(r, j), c[j] = mu2(r, j), d[j] = s2(r, j);
    EXPECT_NEAR(kl(r, 0), gaussian_kl(a, b, c, d), 1e-12);
    EXPECT_NEAR(unit(r, 0), gaussian_kl(a, b, z, o), 1e-12);
    EXPECT_GE(kl(r, 0), -1e-9);
  }
}

TEST(Elbo, PosteriorEqualsPriorAndPerfectReconstruction) {
  Tape tape;
  Rng rng(1);
  ForwardPass fp;
  fp.f_post = Gaussian{tape.leaf(Mat::Zero(2, 3)), tape.leaf(Mat::Ones(2, 3))};
  std::vector<Tensor> target;
  for (int t = 0; t < 4; ++t) {
    const Gaussian g{tape.leaf(gaussian_noise(rng, 2, 2)), tape.leaf(Mat(gaussian_noise(rng, 2, 2).array().exp()))};
    fp.z_post.push_back(g);
    fp.prior.push_back(g);
    target.push_back(tape.leaf(gaussian_noise(rng, 2, 2)));
  }
  fp.recon = target;
  const LossBreakdown b = breakdown(elbo_loss(fp, target, 100.0), 100.0, 0.0);
  EXPECT_NEAR(b.kl_f, 0.0, 1e-12);
  EXPECT_NEAR(b.kl_z, 0.0, 1e-12);
  EXPECT_EQ(b.reconstruction, 0.0);
  EXPECT_NEAR(b.total, 0.0, 1e-10);
}

TEST(Elbo, ReconstructionIsSumOverStepsMeanOverBatch) {
  Tape tape;
  Mat a(2, 2), b(2, 2);
  a << 0, 0, 1, 1;
  b << 3, 4, 1, 1;
  const double r = reconstruction_loss({tape.leaf(a), tape.leaf(a)}, {tape.leaf(b), tape.leaf(a)}).item();
  EXPECT_DOUBLE_EQ(r, 25.0 / 2.0);
  EXPECT_THROW(reconstruction_loss({tape.leaf(a)}, {tape.leaf(a), tape.leaf(b)}), ShapeError);
}

TEST(Elbo, BreakdownIdentity) {
  ModelConfig c = tiny(Variant::fdsvae);
  c.constrained = true;
  c.beta = 3.0;
  c.penalty_weight = 0.7;
  const Model m(c);
  Rng rng(2);
  const auto expr = ConstraintExpr::speed_limit(1.0);
  Tape tape;
  const Bound p(tape, m.params());
  const auto steps = support::leaves(tape, random_steps(rng, 3, 4));
  const Noise noise = m.draw_noise(rng, 4, 3), pn = m.draw_noise(rng, 2, 3);
  const LossBreakdown b = breakdown(batch_loss(m, p, steps, noise, &expr, &pn), c.beta, c.penalty_weight);
  EXPECT_GE(b.kl_f, -1e-9);
  EXPECT_GE(b.kl_z, -1e-9);
  EXPECT_GT(b.penalty, 0.0);
  EXPECT_NEAR(b.total, b.reconstruction + 3.0 * (b.kl_f + b.kl_z) + 0.7 * b.penalty, 1e-9 * std::abs(b.total));
}

TEST(Elbo, ParameterGradientsPassGradCheck) {
  for (Variant v : {Variant::svae_y, Variant::svae_z, Variant::dsvae, Variant::fdsvae, Variant::lstm_baseline}) {
    ModelConfig c = tiny(v);
    c.constrained = v != Variant::lstm_baseline;
    c.beta = 2.0;
    const Model m(c);
    Rng rng(6);
    const std::vector<Mat> data = random_steps(rng, 3, 2);
    const Noise noise = m.draw_noise(rng, 2, 3), pn = m.draw_noise(rng, 2, 3);
    const auto expr = ConstraintExpr::speed_limit(5.0);
    const double err = support::param_grad_error(m.params(), [&](const Bound& p) {
      return batch_loss(m, p, support::leaves(p.tape(), data), noise, &expr, &pn).total;
    });
    EXPECT_LT(err, 1e-4) << to_string(v);
  }
}

// Step 1 east by 1 km, step 2 at 0.3 km per 15 s (72 km/h) turning to cos -0.9:
// (72 - 60) * (0.9 - 0.5) = 4.8 at the single evaluable index.
TEST(Penalty, InjectedViolationHasHandValue) {
  Tape tape;
  std::vector<Tensor> steps;
  const double c = -0.9, s = std::sqrt(1 - c * c);
  for (const Point pt : {Point{0, 0}, Point{1, 0}, Point{1 + 0.3 * c, 0.3 * s}}) {
    Mat m(1, 2);
    m << pt.x, pt.y;
    steps.push_back(tape.leaf(m));
  }
  const Tensor pen = mean_penalty(hinge(ConstraintExpr::sharp_turn_at_speed(), steps, 15.0), tape);
  EXPECT_NEAR(pen.item(), 4.8, 1e-9);
}

TEST(Penalty, AllValidIsZeroAndSqrtGuard) {
  ModelConfig c = tiny(Variant::fdsvae);
  const Model m(c);
  Rng rng(3);
  const Noise pn = m.draw_noise(rng, 8, 3);
  const auto loose = ConstraintExpr::speed_limit(1e9);
  Tape tape;
  const Bound p(tape, m.params());
  EXPECT_EQ(constraint_penalty(m, p, loose, pn, 3, false).item(), 0.0);
  EXPECT_NEAR(constraint_penalty(m, p, loose, pn, 3, true).item(), 1e-6, 1e-18);
  const auto tight = ConstraintExpr::speed_limit(0.5);
  const double plain = constraint_penalty(m, p, tight, pn, 3, false).item();
  EXPECT_NEAR(constraint_penalty(m, p, tight, pn, 3, true).item(), std::sqrt(plain), 1e-12);
}

TEST(Penalty, AddingViolatedTermNeverDecreases) {
  const Model m(tiny(Variant::dsvae));
  Rng rng(9);
  const std::vector<ConstraintExpr> parts{ConstraintExpr::speed_limit(3.0), ConstraintExpr::sharp_turn_at_speed(5.0),
                                          ConstraintExpr::region({Rect{-0.1, -0.1, 0.1, 0.1}})};
  for (int trial = 0; trial < 5; ++trial) {
    const Noise pn = m.draw_noise(rng, 16, 3);
    Tape tape;
    const Bound p(tape, m.params());
    for (const auto& a : parts)
      for (const auto& b : parts) {
        const double one = constraint_penalty(m, p, a, pn, 3, false).item();
        const double both = constraint_penalty(m, p, ConstraintExpr::all_of(a, b), pn, 3, false).item();
        EXPECT_GE(both, one - 1e-12);
      }
  }
}

TEST(Trainer, ZeroLearningRateLeavesParams) {
  ModelConfig c = tiny(Variant::fdsvae);
  c.learning_rate = 0.0;
  c.batch_size = 4;
  Model m(c);
  const ParamSet before = m.params();
  Rng rng(1);
  Trainer(m).train_epoch(random_corpus(rng, 10, 3));
  EXPECT_TRUE(m.params() == before);
}

TEST(Trainer, SameSeedSameBreakdown) {
  ModelConfig c = tiny(Variant::dsvae);
  c.batch_size = 4;
  Rng rng(1);
  const Trajectories data = random_corpus(rng, 10, 3);
  Model a(c), b(c);
  Trainer ta(a), tb(b);
  for (int e = 0; e < 2; ++e) {
    const EpochReport ra = ta.train_epoch(data), rb = tb.train_epoch(data);
    EXPECT_TRUE(ra.loss == rb.loss);
    EXPECT_EQ(ra.batches, 3u);
  }
  EXPECT_TRUE(a.params() == b.params());
}

TEST(Trainer, ZeroPenaltyWeightMatchesUnconstrained) {
  ModelConfig c = tiny(Variant::fdsvae);
  c.batch_size = 4;
  c.penalty_weight = 0.0;
  ModelConfig s = c;
  s.constrained = true;
  Rng rng(1);
  const Trajectories data = random_corpus(rng, 12, 3);
  Model plain(c), constrained(s);
  Trainer tp(plain), ts(constrained, ConstraintExpr::sharp_turn_at_speed(1.0));
  for (int e = 0; e < 3; ++e) {
    const EpochReport a = tp.train_epoch(data), b = ts.train_epoch(data);
    EXPECT_EQ(a.loss.total, b.loss.total);
  }
  EXPECT_TRUE(plain.params() == constrained.params());
}

TEST(Trainer, NonFiniteLossAbortsWithBatchIndex) {
  ModelConfig c = tiny(Variant::svae_z);
  c.batch_size = 2;
  Model m(c);
  const ParamSet before = m.params();
  Rng rng(1);
  Trajectories data = random_corpus(rng, 2, 3);
  data[1].points[2] = {1e200, -1e200};
  try {
    Trainer(m).train_epoch(data);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.batch_index, 0u);
  }
  EXPECT_TRUE(m.params() == before);
}

TEST(Trainer, WrongWindowLengthRejected) {
  Model m(tiny(Variant::fdsvae));
  Rng rng(1);
  EXPECT_THROW(Trainer(m).train_epoch(random_corpus(rng, 3, 4)), ShapeError);
  EXPECT_THROW(Trainer(m).train_epoch({}), std::invalid_argument);
}
