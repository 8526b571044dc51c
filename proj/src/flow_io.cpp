#include "rem/error.hpp"
#include "rem/flow.hpp"

namespace rem {

Json flow_to_json(const FlowModel& m) {
  Json stack = Json::array();
  for (const Bijector& b : m.stack) {
    if (const auto* c = std::get_if<AffineCoupling>(&b)) {
      stack.push_back(Json{{"type", "affine_coupling"},
                           {"dim", c->dim},
                           {"parity", c->parity},
                           {"scale_net", nn::mlp_to_json(c->scale_net)},
                           {"shift_net", nn::mlp_to_json(c->shift_net)}});
    } else {
      const auto& cb = std::get<ContinuousBlock>(b);
      stack.push_back(Json{{"type", "continuous"},
                           {"dim", cb.dim},
                           {"integrator", "rk4"},
                           {"steps", cb.steps},
                           {"dynamics", nn::mlp_to_json(cb.dynamics)}});
    }
  }
  return Json{{"format", "rem-flow-v1"},
              {"dim", m.dim},
              {"base", {{"type", "spherical_gaussian"}, {"dim", m.dim}}},
              {"variant", m.config.variant},
              {"config", flow_config_to_json(m.config)},
              {"seed", m.config.seed},
              {"pca", m.pca_reference},
              {"history", m.history},
              {"stack", stack}};
}

FlowModel flow_from_json(const Json& j) {
  FlowModel m;
  try {
    if (j.value("format", "") != "rem-flow-v1") throw ValidationError("not a rem-flow-v1 model file");
    m.dim = j.at("dim").get<int>();
    m.config = flow_config_from_json(j.at("config"));
    m.pca_reference = j.value("pca", "");
    m.history = j.value("history", std::vector<double>{});
    for (const Json& jb : j.at("stack")) {
      const std::string type = jb.at("type").get<std::string>();
      if (type == "affine_coupling") {
        AffineCoupling c;
        c.dim = jb.at("dim").get<int>();
        c.parity = jb.at("parity").get<int>();
        c.scale_net = nn::mlp_from_json(jb.at("scale_net"));
        c.shift_net = nn::mlp_from_json(jb.at("shift_net"));
        const auto n_cond = static_cast<int>(c.conditioner_dims().size());
        const auto n_trans = static_cast<int>(c.transformed_dims().size());
        for (const nn::MlpParams* p : {&c.scale_net, &c.shift_net}) {
          if (p->input_dim() != n_cond || p->output_dim() != n_trans) {
            throw ValidationError("coupling network shape disagrees with its mask");
          }
        }
        m.stack.emplace_back(std::move(c));
      } else if (type == "continuous") {
        ContinuousBlock cb;
        cb.dim = jb.at("dim").get<int>();
        cb.steps = jb.at("steps").get<int>();
        cb.dynamics = nn::mlp_from_json(jb.at("dynamics"));
        if (cb.dynamics.input_dim() != cb.dim + 1 || cb.dynamics.output_dim() != cb.dim || cb.steps < 1) {
          throw ValidationError("continuous block shape is inconsistent");
        }
        m.stack.emplace_back(std::move(cb));
      } else {
        throw ValidationError("unknown bijector type '" + type + "'");
      }
      if (bijector_dim(m.stack.back()) != m.dim) throw ValidationError("bijector dimension disagrees with model");
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
  if (m.stack.empty()) throw ValidationError("model has an empty bijector stack");
  return m;
}

}  // namespace rem
