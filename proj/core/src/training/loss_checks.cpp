#include "avsync/training/loss_checks.hpp"

#include <algorithm>
#include <functional>

#include "avsync/diffnum/gradcheck.hpp"
#include "avsync/diffnum/ops.hpp"
#include "avsync/discriminator/discriminator.hpp"
#include "avsync/syncer/syncer.hpp"
#include "avsync/training/training.hpp"

namespace avsync::training {

namespace {

Tensor rnd(diff::Shape s, diff::Rng& rng, bool param = false, double sd = 1.0) {
  const auto n = diff::numel(s);
  auto v = diff::normal_init(n, sd, rng);
  return param ? Tensor::parameter(std::move(s), std::move(v)) : Tensor::from(std::move(s), std::move(v));
}

syncer::SyncerConfig small_syncer(std::size_t level) {
  syncer::SyncerConfig c;
  c.level = level;
  c.embed_dim = 6;
  c.conv_channels = 3;
  return c;
}

std::vector<Tensor> params_of(const diff::ParameterStore& s) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : s.entries()) out.push_back(t);
  return out;
}

// One instance: builds the problem and returns the loss closure plus the
// tensors to probe.
struct Instance {
  std::function<Tensor()> loss;
  std::vector<Tensor> wrt;
  std::shared_ptr<void> keep;  // owns models referenced by the closure
};

using Builder = std::function<Instance(std::uint64_t)>;

Instance infonce(std::uint64_t seed) {
  auto m = std::make_shared<syncer::SyncerModel>(small_syncer(1), seed);
  diff::Rng rng(seed + 1);
  auto b = std::make_shared<syncer::ContrastiveBatch>();
  b->anchors = rnd({3, 20, 26}, rng);
  b->positives = rnd({3, 5, 60}, rng);
  b->negatives = rnd({3, 4, 5, 60}, rng);
  Instance in;
  in.wrt = params_of(m->params());
  in.loss = [m, b] { return syncer::infonce_loss(*m, *b); };
  in.keep = m;
  return in;
}

Instance triplet(std::uint64_t seed) {
  auto m = std::make_shared<syncer::SyncerModel>(small_syncer(1), seed);
  diff::Rng rng(seed + 2);
  const auto a = rnd({4, 20, 26}, rng), p = rnd({4, 5, 60}, rng), n = rnd({4, 5, 60}, rng);
  Instance in;
  in.wrt = params_of(m->params());
  in.loss = [m, a, p, n] { return syncer::triplet_loss(*m, a, p, n); };
  in.keep = m;
  return in;
}

Instance ms_av(std::uint64_t seed) {
  auto ms = std::make_shared<std::vector<syncer::SyncerModel>>();
  for (std::size_t l = 1; l <= 4; ++l) {
    ms->emplace_back(small_syncer(l), seed + l);
    ms->back().freeze();
  }
  diff::Rng rng(seed + 3);
  auto x = rnd({1, 40, 60}, rng, true, 0.5);
  const auto audio = rnd({1, 160, 26}, rng);
  Instance in;
  in.wrt = {x};
  in.loss = [ms, x, audio] {
    std::vector<const syncer::SyncerModel*> p;
    for (const auto& m : *ms) p.push_back(&m);
    return ms_av_loss(p, x, audio).total;
  };
  in.keep = ms;
  return in;
}

struct Critics {
  Critics(std::uint64_t seed) : df(6, seed), ds({6, {4, 8, 16, 32}}, seed + 1) {}
  discriminator::FrameDiscriminator df;
  discriminator::SequenceDiscriminator ds;
};

Instance d_hinge(std::uint64_t seed) {
  auto c = std::make_shared<Critics>(seed);
  diff::Rng rng(seed + 4);
  const auto real = rnd({2, 12, 60}, rng), fake = rnd({2, 12, 60}, rng);
  Instance in;
  in.wrt = params_of(c->df.params());
  for (auto& t : params_of(c->ds.params())) in.wrt.push_back(t);
  in.loss = [c, real, fake] {
    return diff::add(discriminator::d_hinge_loss(discriminator::frame_scores_after_first(c->df, real),
                                                 discriminator::frame_scores_after_first(c->df, fake)),
                     discriminator::d_hinge_loss(c->ds.score(real), c->ds.score(fake)));
  };
  in.keep = c;
  return in;
}

Instance g_adv(std::uint64_t seed) {
  auto c = std::make_shared<Critics>(seed);
  diff::Rng rng(seed + 5);
  auto fake = rnd({2, 12, 60}, rng, true);
  Instance in;
  in.wrt = {fake};
  in.loss = [c, fake] { return discriminator::g_adv_loss(c->df, c->ds, fake); };
  in.keep = c;
  return in;
}

Instance rec(std::uint64_t seed) {
  diff::Rng rng(seed + 6);
  auto a = rnd({2, 40, 60}, rng, true);
  const auto b = rnd({2, 40, 60}, rng);
  Instance in;
  in.wrt = {a};
  in.loss = [a, b] { return rec_loss(a, b); };
  return in;
}

const std::vector<std::pair<std::string, Builder>>& registry() {
  static const std::vector<std::pair<std::string, Builder>> r{
      {"infonce", infonce}, {"triplet", triplet}, {"ms_av", ms_av},
      {"d_hinge", d_hinge}, {"g_adv", g_adv},     {"rec", rec}};
  return r;
}

}  // namespace

std::vector<std::string> registered_losses() {
  std::vector<std::string> names;
  for (const auto& [n, b] : registry()) names.push_back(n);
  return names;
}

std::vector<LossCheckResult> run_loss_checks(std::size_t instances, std::uint64_t seed, double tolerance) {
  std::vector<LossCheckResult> out;
  for (const auto& [name, build] : registry()) {
    LossCheckResult r;
    r.name = name;
    for (std::size_t i = 0; i < instances; ++i) {
      const std::uint64_t s = seed * 1000 + i * 17;
      const Instance in = build(s);
      diff::GradCheckOptions opt;
      opt.max_entries_per_tensor = std::max<std::size_t>(8, 64 / in.wrt.size());
      opt.seed = s;
      const auto g = diff::gradcheck(in.loss, in.wrt, opt);
      r.entries += g.entries_checked;
      if (g.max_rel_error >= r.max_rel_error) {
        r.max_rel_error = g.max_rel_error;
        r.worst = "instance " + std::to_string(i) + ": " + g.worst;
      }
      ++r.instances;
    }
    r.passed = r.max_rel_error < tolerance;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace avsync::training
