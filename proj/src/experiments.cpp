#include "ssam/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "ssam/experts.hpp"
#include "ssam/gradcheck.hpp"
#include "ssam/losses.hpp"
#include "ssam/moe.hpp"
#include "ssam/ops.hpp"

namespace ssam::pipeline {

namespace {

using D = Tensor<double>;

D uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  D t(std::move(shape));
  for (double& v : t.mutable_data()) v = dist(rng);
  return t;
}

D binary(Shape shape, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.3);
  D t(std::move(shape));
  for (double& v : t.mutable_data()) v = coin(rng) ? 1.0 : 0.0;
  return t;
}

struct Check {
  std::string name;
  std::function<GradientComparison(std::uint64_t seed)> run;
};

std::vector<Check> primitive_checks() {
  return {
      {"conv2d",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         return check_op_gradients([](const auto& in) { return ops::conv2d(in[0], in[1], in[2]); },
                                   {uniform({2, 4, 8, 8}, r), uniform({4, 4, 3, 3}, r), uniform({4}, r)}, s);
       }},
      {"bilinear_sample",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         // Sampling points keep their fractional parts inside (0.2, 0.8).
         D coords({2, 16, 2});
         std::uniform_int_distribution<int> cell(0, 6);
         std::uniform_real_distribution<double> frac(0.2, 0.8);
         for (double& v : coords.mutable_data()) v = cell(r) + frac(r);
         return check_op_gradients([](const auto& in) { return ops::bilinear_sample(in[0], in[1]); },
                                   {uniform({2, 4, 8, 8}, r), coords}, s);
       }},
      {"diffusion_step",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         return check_op_gradients([](const auto& in) { return ops::diffusion_step(in[0], in[1], 0.2); },
                                   {uniform({2, 4, 8, 8}, r), uniform({2, 4, 8, 8}, r, 0.1, 1.0)}, s);
       }},
      {"softmax",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         return check_op_gradients([](const auto& in) { return ops::softmax_stable(in[0], 1); },
                                   {uniform({8, 4}, r, -3, 3)}, s);
       }},
      {"attention",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         return check_op_gradients([](const auto& in) { return ops::attention(in[0], in[1], in[2], 2); },
                                   {uniform({2, 16, 4}, r), uniform({2, 16, 4}, r), uniform({2, 16, 4}, r)}, s);
       }},
  };
}

std::vector<Check> expert_checks() {
  using namespace experts;
  return {
      {"pimdo",
       [](std::uint64_t s) {
         Rng rng(s);
         auto p = PimdoParams<double>::init(rng);
         std::mt19937_64 r(s + 50);
         return check_op_gradients(
             [&](const auto& in) {
               PimdoParams<double> q = p;
               q.ctrl_w1 = in[1], q.ctrl_b1 = in[2], q.ctrl_w2 = in[3], q.ctrl_b2 = in[4];
               return pimdo_forward(in[0], q);
             },
             {uniform({1, 4, 8, 8}, r), p.ctrl_w1, p.ctrl_b1, p.ctrl_w2, p.ctrl_b2}, s);
       }},
      {"spd",
       [](std::uint64_t s) {
         Rng rng(s);
         auto p = SpdParams<double>::init(4, rng);
         std::mt19937_64 r(s + 60);
         return check_op_gradients(
             [](const auto& in) {
               SpdParams<double> q;
               q.analysis = in[1], q.synthesis = in[2], q.att_w1 = in[3], q.att_b1 = in[4], q.att_w2 = in[5],
               q.att_b2 = in[6];
               return spd_forward(in[0], q);
             },
             {uniform({1, 4, 8, 8}, r), p.analysis, p.synthesis, p.att_w1, p.att_b1, p.att_w2, p.att_b2}, s);
       }},
      {"hplsm",
       [](std::uint64_t s) {
         Rng rng(s);
         auto p = HplsmParams<double>::init(4, rng);
         std::mt19937_64 r(s + 70);
         return check_op_gradients(
             [](const auto& in) {
               HplsmParams<double> q;
               q.base_w = in[1], q.base_b = in[2], q.hyp_w1 = in[3], q.hyp_b1 = in[4], q.hyp_w2 = in[5],
               q.hyp_b2 = in[6], q.fc_w = in[7], q.fc_b = in[8];
               return hplsm_forward(in[0], q);
             },
             {uniform({1, 4, 8, 8}, r), p.base_w, p.base_b, p.hyp_w1, p.hyp_b1, p.hyp_w2, p.hyp_b2, p.fc_w, p.fc_b},
             s);
       }},
      {"tgds",
       [](std::uint64_t s) {
         Rng rng(s);
         auto p = TgdsParams<double>::init(4, rng);
         std::mt19937_64 r(s + 80);
         // Offsets pushed off the integer grid, where bilinear weights kink.
         p.off_w = uniform({18, 4, 3, 3}, r, -0.003, 0.003);
         p.off_b = uniform({18}, r, 0.2, 0.3);
         for (std::size_t i = 0; i < 18; i += 2) p.off_b.mutable_data()[i] *= -1;
         return check_op_gradients(
             [](const auto& in) {
               TgdsParams<double> q;
               q.off_w = in[1], q.off_b = in[2], q.agg_w = in[3];
               return tgds_forward(in[0], q).y;
             },
             {uniform({1, 4, 8, 8}, r), p.off_w, p.off_b, p.agg_w}, s);
       }},
  };
}

std::vector<Check> router_checks() {
  return {{"router", [](std::uint64_t s) {
             Rng rng(s);
             auto p = moe::RouterParams<double>::init(4, 4, rng);
             std::mt19937_64 r(s + 90);
             p.w2 = uniform({4, 16}, r);
             return check_op_gradients(
                 [](const auto& in) {
                   moe::RouterParams<double> q{in[1], in[2], in[3], in[4]};
                   return moe::route_weights(in[0], q);
                 },
                 {uniform({2, 4, 8, 8}, r), p.w1, p.b1, p.w2, p.b2}, s);
           }}};
}

std::vector<Check> loss_checks(bool corrupt_dice) {
  return {
      {"bce",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         auto z = uniform({2, 1, 8, 8}, r, -3, 3);
         auto t = binary({2, 1, 8, 8}, r);
         return check_op_gradients([&](const auto& in) { return losses::bce_loss(in[0], t); }, {z}, s);
       }},
      {"dice",
       [corrupt_dice](std::uint64_t s) {
         std::mt19937_64 r(s);
         auto z = uniform({2, 1, 8, 8}, r, -3, 3);
         auto t = binary({2, 1, 8, 8}, r);
         return check_op_gradients(
             [&](const auto& in) {
               return losses::dice_loss(corrupt_dice ? skew_gradient(in[0], 1.1) : in[0], t, 1.0);
             },
             {z}, s);
       }},
      {"sparse",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         D f({4}, std::vector<double>{0.25, 0.5, 0.0, 0.25});
         auto p = uniform({4}, r, 0.1, 1.0);
         double total = 0;
         for (double v : p.data()) total += v;
         for (double& v : p.mutable_data()) v /= total;
         // Steps stay below the simplex tolerance; the loss is linear in P.
         return check_op_gradients([&](const auto& in) { return losses::sparse_loss(f, in[0], 1.0); }, {p}, s,
                                   1e-7);
       }},
      {"topo",
       [](std::uint64_t s) {
         std::mt19937_64 r(s);
         return check_op_gradients([](const auto& in) { return losses::topo_loss(in[0]); },
                                   {uniform({2, 1, 8, 8}, r, 0, 1)}, s);
       }},
  };
}

}  // namespace

Tensor<double> skew_gradient(const Tensor<double>& x, double factor) {
  D out(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  if (auto* g = detail::recorder<double>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    detail::record(g, "skew_gradient", {xi}, out, [xi, oi, factor] {
      if (!xi->requires_grad || oi->grad.empty()) return;
      double* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += factor * oi->grad[i];
    });
  }
  return out;
}

GradcheckScope parse_scope(const std::string& s) {
  if (s == "primitives") return GradcheckScope::Primitives;
  if (s == "experts") return GradcheckScope::Experts;
  if (s == "losses") return GradcheckScope::Losses;
  if (s == "router") return GradcheckScope::Router;
  if (s == "all") return GradcheckScope::All;
  throw ConfigError("unknown gradcheck scope '" + s + "'");
}

std::vector<GradcheckLine> run_gradcheck(GradcheckScope scope, const GradcheckOptions& opts) {
  if (opts.seeds.empty()) throw ConfigError("gradcheck needs at least one seed");
  std::vector<Check> checks;
  auto add = [&](std::vector<Check> more) { checks.insert(checks.end(), more.begin(), more.end()); };
  const bool all = scope == GradcheckScope::All;
  if (all || scope == GradcheckScope::Primitives) add(primitive_checks());
  if (all || scope == GradcheckScope::Experts) add(expert_checks());
  if (all || scope == GradcheckScope::Router) add(router_checks());
  if (all || scope == GradcheckScope::Losses) add(loss_checks(opts.corrupt_dice));
  std::vector<GradcheckLine> lines;
  for (const auto& c : checks) {
    GradientComparison worst;
    for (auto seed : opts.seeds) worst = merge(worst, c.run(seed));
    lines.push_back({c.name, worst.worst_rel_err, worst.worst_abs_err, worst.pass});
  }
  return lines;
}

std::string format_gradcheck(const std::vector<GradcheckLine>& lines) {
  std::ostringstream os;
  for (const auto& l : lines) {
    os << l.name << ' ' << std::scientific << std::setprecision(3) << l.worst_rel_err << ' '
       << (l.pass ? "pass" : "fail") << '\n';
  }
  return os.str();
}

AblationAxis parse_axis(const std::string& s) {
  if (s == "insertion") return AblationAxis::Insertion;
  if (s == "experts") return AblationAxis::Experts;
  if (s == "lambda_sparse") return AblationAxis::LambdaSparse;
  throw ConfigError("unknown ablation axis '" + s + "'");
}

std::string axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::Insertion: return "insertion";
    case AblationAxis::Experts: return "experts";
    case AblationAxis::LambdaSparse: return "lambda_sparse";
  }
  return "?";
}

std::vector<std::string> default_settings(AblationAxis a) {
  switch (a) {
    case AblationAxis::Insertion: return {"none", "first_half", "last_half", "all", "last_2"};
    case AblationAxis::Experts:
      return {"PI+SPD+HP+TG", "SPD+HP+TG", "PI+HP+TG", "PI+SPD+TG", "PI+SPD+HP", "PI", "SPD", "HP", "TG"};
    case AblationAxis::LambdaSparse: return {"0.001", "0.01", "0.08"};
  }
  return {};
}

TrainConfig apply_setting(AblationAxis axis, const std::string& setting, TrainConfig cfg) {
  switch (axis) {
    case AblationAxis::Insertion:
      if (setting != "none" && setting != "first_half" && setting != "last_half" && setting != "all" &&
          setting != "last_2") {
        throw ConfigError("insertion setting must be none, first_half, last_half, all or last_2");
      }
      cfg.insertion = setting;
      break;
    case AblationAxis::Experts: {
      std::string list = setting;
      std::replace(list.begin(), list.end(), '+', ',');
      cfg.experts = parse_experts(list);
      break;
    }
    case AblationAxis::LambdaSparse:
      cfg.set("lambda_sparse", setting);
      break;
  }
  cfg.validate();
  return cfg;
}

std::vector<AblationRow> run_ablation(AblationAxis axis, const std::vector<std::string>& settings,
                                      const std::vector<std::uint64_t>& seeds, const TrainConfig& base,
                                      const data::Manifest& manifest, const Progress& progress) {
  if (manifest.count(data::Provenance::Val) == 0) throw ContractError("ablation needs validation entries");
  std::vector<TrainConfig> configs;
  for (const auto& s : settings) configs.push_back(apply_setting(axis, s, base));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < settings.size(); ++i)
    for (auto seed : seeds) {
      TrainConfig cfg = configs[i];
      cfg.seed = seed;
      const auto start = std::chrono::steady_clock::now();
      auto run = train_teacher(cfg, manifest, progress);
      AblationRow row;
      row.axis = axis_name(axis);
      row.setting = settings[i];
      row.seed = seed;
      row.val = *run.val;
      row.final_loss = run.final_loss;
      row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      rows.push_back(row);
    }
  return rows;
}

std::string ablation_header() { return "axis,setting,seed,mIoU,nIoU,Pd,Fa,final_loss,wall_s"; }

std::string ablation_row(const AblationRow& r) {
  std::ostringstream os;
  os << std::setprecision(10) << r.axis << ',' << r.setting << ',' << r.seed << ',' << r.val.mIoU << ','
     << r.val.nIoU << ',' << r.val.Pd << ',' << r.val.Fa << ',' << r.final_loss << ',' << std::fixed
     << std::setprecision(3) << r.wall_s;
  return os.str();
}

}  // namespace ssam::pipeline
