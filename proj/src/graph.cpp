#include "tminfer/graph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "tminfer/error.hpp"

namespace tminfer {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::string activation_name(ops::Activation a) {
  switch (a) {
    case ops::Activation::Linear: return "linear";
    case ops::Activation::Relu: return "relu";
    case ops::Activation::Relu6: return "relu6";
    case ops::Activation::Softmax: return "softmax";
  }
  return "?";
}

ops::Activation parse_activation(const LayerSpec& layer) {
  auto it = layer.config.find("activation");
  if (it == layer.config.end() || it->is_null()) return ops::Activation::Linear;
  const auto name = it->get<std::string>();
  if (name == "linear") return ops::Activation::Linear;
  if (name == "relu") return ops::Activation::Relu;
  if (name == "relu6") return ops::Activation::Relu6;
  if (name == "softmax") return ops::Activation::Softmax;
  throw Error(ErrorCode::UnsupportedLayer, layer.class_name + "(activation=" + name + ")");
}

template <class T>
T config_or(const LayerSpec& layer, const char* key, T fallback) {
  auto it = layer.config.find(key);
  if (it == layer.config.end() || it->is_null()) return fallback;
  return it->get<T>();
}

ops::Window config_pair(const LayerSpec& layer, const char* key, ops::Window fallback) {
  auto it = layer.config.find(key);
  if (it == layer.config.end() || it->is_null()) return fallback;
  if (it->is_number_integer()) {
    const auto v = it->get<std::size_t>();
    return {v, v};
  }
  if (!it->is_array() || it->size() != 2) {
    throw Error(ErrorCode::InvalidValue, layer.name + "." + key + " must be a pair");
  }
  return {(*it)[0].get<std::size_t>(), (*it)[1].get<std::size_t>()};
}

ops::Padding parse_padding(const LayerSpec& layer) {
  const auto mode = config_or<std::string>(layer, "padding", "valid");
  if (mode == "same") return ops::Padding::Same;
  if (mode == "valid") return ops::Padding::Valid;
  throw Error(ErrorCode::UnsupportedLayer, layer.class_name + "(padding=" + mode + ")");
}

void require_channels_last(const LayerSpec& layer) {
  const auto fmt = config_or<std::string>(layer, "data_format", "channels_last");
  if (fmt != "channels_last") {
    throw Error(ErrorCode::UnsupportedLayer, layer.class_name + "(data_format=" + fmt + ")");
  }
}

void require_unit_dilation(const LayerSpec& layer) {
  const auto d = config_pair(layer, "dilation_rate", {1, 1});
  if (d.h != 1 || d.w != 1) {
    throw Error(ErrorCode::UnsupportedLayer, layer.class_name + " with dilation");
  }
}

ops::Pads parse_zero_padding(const LayerSpec& layer) {
  auto it = layer.config.find("padding");
  if (it == layer.config.end() || it->is_null()) return {1, 1, 1, 1};
  if (it->is_number_integer()) {
    const auto v = it->get<std::size_t>();
    return {v, v, v, v};
  }
  if (it->is_array() && it->size() == 2) {
    const auto& h = (*it)[0];
    const auto& w = (*it)[1];
    if (h.is_number_integer() && w.is_number_integer()) {
      return {h.get<std::size_t>(), h.get<std::size_t>(), w.get<std::size_t>(),
              w.get<std::size_t>()};
    }
    if (h.is_array() && w.is_array() && h.size() == 2 && w.size() == 2) {
      return {h[0].get<std::size_t>(), h[1].get<std::size_t>(), w[0].get<std::size_t>(),
              w[1].get<std::size_t>()};
    }
  }
  throw Error(ErrorCode::InvalidValue, layer.name + ".padding has an unsupported form");
}

// Softmax along the last axis.
NdArray softmax_rows(const NdArray& x) {
  if (x.rank() <= 1) return ops::softmax(x);
  const std::size_t n = x.shape().back();
  NdArray out(x.shape());
  for (std::size_t r = 0; r < x.size(); r += n) {
    NdArray row({n}, std::vector<float>(x.data() + r, x.data() + r + n));
    const auto s = ops::softmax(row);
    std::copy_n(s.data(), n, out.data() + r);
  }
  return out;
}

NdArray apply_activation(const NdArray& x, ops::Activation a) {
  return a == ops::Activation::Softmax ? softmax_rows(x) : ops::activate(x, a);
}

NdArray dense_rows(const NdArray& x, const node::Dense& d, ops::Activation a) {
  const std::size_t n = d.kernel.dim(0), m = d.kernel.dim(1);
  if (x.rank() <= 1) {
    auto y = ops::dense(x, d.kernel, d.bias, ops::Activation::Linear);
    return apply_activation(y, a);
  }
  Shape shape = x.shape();
  shape.back() = m;
  NdArray out(shape);
  for (std::size_t r = 0, o = 0; r < x.size(); r += n, o += m) {
    NdArray row({n}, std::vector<float>(x.data() + r, x.data() + r + n));
    const auto y = ops::dense(row, d.kernel, d.bias, ops::Activation::Linear);
    std::copy_n(y.data(), m, out.data() + o);
  }
  return apply_activation(out, a);
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

// Compiles a LayerSpec tree into ExecutionPlan nodes, tracking value shapes
// and which manifest weights have been bound.
class PlanBuilder {
 public:
  explicit PlanBuilder(const ModelBundle& bundle) : bundle_(bundle) {}

  ExecutionPlan build() {
    const auto side = static_cast<std::size_t>(bundle_.metadata.image_size);
    plan_.image_size_ = side;
    plan_.labels_ = bundle_.metadata.labels;
    shapes_.push_back({side, side, ExecutionPlan::kChannels});

    std::vector<std::string> scope;
    std::size_t out = bundle_.topology.is_container()
                          ? compile_container(bundle_.topology, {0}, scope)
                          : compile_layer(bundle_.topology, {0}, scope);

    if (!ends_in_softmax(out)) {
      plan_.warnings_.push_back("final layer is not softmax; appended a softmax node");
      PlanNode n;
      n.name = "appended_softmax";
      n.class_name = "Activation";
      n.op = node::Activation{};
      n.activation = ops::Activation::Softmax;
      out = emit(std::move(n), {out}, shapes_[out]);
    }
    if (element_count(shapes_[out]) != plan_.labels_.size()) {
      throw Error(ErrorCode::LabelCountMismatch,
                  "model output " + shape_to_string(shapes_[out]) + " for " +
                      std::to_string(plan_.labels_.size()) + " labels");
    }

    std::vector<std::string> unbound;
    for (const auto& name : bundle_.weights.names()) {
      if (!consumed_.contains(name)) unbound.push_back(name);
    }
    if (!unbound.empty()) throw Error(ErrorCode::UnboundWeights, join(unbound, ", "));

    plan_.output_slot_ = out;
    plan_.last_use_.assign(plan_.nodes_.size() + 1, 0);
    for (std::size_t k = 0; k < plan_.nodes_.size(); ++k) {
      for (auto slot : plan_.nodes_[k].inputs) plan_.last_use_[slot] = k;
    }
    return std::move(plan_);
  }

 private:
  bool ends_in_softmax(std::size_t slot) const {
    if (slot == 0) return false;
    return plan_.nodes_[slot - 1].activation == ops::Activation::Softmax;
  }

  std::size_t compile_container(const LayerSpec& model, const std::vector<std::size_t>& inputs,
                                std::vector<std::string>& scope) {
    scope.push_back(model.name);
    const bool functional = std::any_of(model.inner_layers.begin(), model.inner_layers.end(),
                                        [](const LayerSpec& l) { return l.inbound.has_value(); });
    const std::size_t out = functional ? compile_functional(model, inputs, scope)
                                       : compile_sequential(model, inputs, scope);
    scope.pop_back();
    return out;
  }

  std::size_t compile_sequential(const LayerSpec& model, const std::vector<std::size_t>& inputs,
                                 std::vector<std::string>& scope) {
    if (inputs.size() != 1) {
      throw Error(ErrorCode::ShapeMismatch, model.name + " takes exactly one input");
    }
    std::size_t value = inputs.front();
    for (const auto& layer : model.inner_layers) {
      if (layer.is_container()) {
        value = compile_container(layer, {value}, scope);
      } else {
        value = compile_layer(layer, {value}, scope);
      }
    }
    return value;
  }

  std::size_t compile_functional(const LayerSpec& model, const std::vector<std::size_t>& inputs,
                                 std::vector<std::string>& scope) {
    std::vector<std::string> input_names;
    if (auto it = model.config.find("input_layers"); it != model.config.end()) {
      for (const auto& ref : *it) input_names.push_back(ref.at(0).get<std::string>());
    } else {
      for (const auto& l : model.inner_layers) {
        if (l.class_name == "InputLayer") input_names.push_back(l.name);
      }
    }
    if (input_names.size() != inputs.size()) {
      throw Error(ErrorCode::ShapeMismatch, model.name + " declares " +
                                                std::to_string(input_names.size()) +
                                                " inputs, given " + std::to_string(inputs.size()));
    }

    std::map<std::string, std::size_t> values;
    for (std::size_t i = 0; i < input_names.size(); ++i) values[input_names[i]] = inputs[i];

    // Declaration order with deferral, so out-of-order layers still resolve.
    std::vector<const LayerSpec*> pending;
    for (const auto& l : model.inner_layers) {
      if (!values.contains(l.name)) pending.push_back(&l);
    }
    std::size_t last = inputs.empty() ? 0 : inputs.front();
    while (!pending.empty()) {
      bool progressed = false;
      for (auto it = pending.begin(); it != pending.end();) {
        const LayerSpec& layer = **it;
        std::vector<std::size_t> args;
        bool ready = true;
        if (layer.inbound) {
          for (const auto& name : *layer.inbound) {
            auto v = values.find(name);
            if (v == values.end()) {
              ready = false;
              break;
            }
            args.push_back(v->second);
          }
        } else {
          args.push_back(last);
        }
        if (!ready) {
          ++it;
          continue;
        }
        if (args.empty()) {
          throw Error(ErrorCode::MalformedDocument, "layer " + layer.name + " has no inputs");
        }
        last = layer.is_container() ? compile_container(layer, args, scope)
                                    : compile_layer(layer, args, scope);
        values[layer.name] = last;
        it = pending.erase(it);
        progressed = true;
      }
      if (!progressed) {
        throw Error(ErrorCode::MalformedDocument,
                    "unresolvable inbound connection in " + model.name + " at " +
                        pending.front()->name);
      }
    }

    if (auto it = model.config.find("output_layers"); it != model.config.end() && !it->empty()) {
      if (it->size() != 1) {
        throw Error(ErrorCode::UnsupportedLayer, model.name + " with multiple outputs");
      }
      const auto name = (*it)[0].at(0).get<std::string>();
      auto v = values.find(name);
      if (v == values.end()) throw Error(ErrorCode::MalformedDocument, "unknown output " + name);
      return v->second;
    }
    return last;
  }

  const NdArray& bind(const LayerSpec& layer, const std::vector<std::string>& scope,
                      const std::string& param) {
    const std::string leaf = layer.name + "/" + param;
    // Most specific qualified name first, then the bare layer/param name.
    for (std::size_t skip = 0; skip <= scope.size(); ++skip) {
      std::string name;
      for (std::size_t i = skip; i < scope.size(); ++i) name += scope[i] + "/";
      name += leaf;
      if (const NdArray* arr = bundle_.weights.find(name)) {
        consumed_.insert(name);
        return *arr;
      }
    }
    const NdArray* match = nullptr;
    std::string match_name;
    for (const auto& name : bundle_.weights.names()) {
      if (name.size() > leaf.size() && name.ends_with("/" + leaf) && !consumed_.contains(name)) {
        match = bundle_.weights.find(name);
        match_name = name;
        break;
      }
    }
    if (!match) throw Error(ErrorCode::MissingWeight, leaf);
    consumed_.insert(match_name);
    return *match;
  }

  std::size_t emit(PlanNode n, std::vector<std::size_t> inputs, Shape out_shape) {
    n.inputs = std::move(inputs);
    n.output_shape = std::move(out_shape);
    plan_.nodes_.push_back(std::move(n));
    shapes_.push_back(plan_.nodes_.back().output_shape);
    return plan_.nodes_.size();
  }

  const Shape& single_input(const LayerSpec& layer, const std::vector<std::size_t>& inputs) {
    if (inputs.size() != 1) {
      throw Error(ErrorCode::ShapeMismatch, layer.name + " expects one input, got " +
                                                std::to_string(inputs.size()));
    }
    return shapes_[inputs.front()];
  }

  const Shape& image_input(const LayerSpec& layer, const std::vector<std::size_t>& inputs) {
    const Shape& s = single_input(layer, inputs);
    if (s.size() != 3) {
      throw Error(ErrorCode::ShapeMismatch,
                  layer.name + " needs an HWC input, got " + shape_to_string(s));
    }
    return s;
  }

  void check_input_layer(const LayerSpec& layer, const std::vector<std::size_t>& inputs) {
    const Shape& s = single_input(layer, inputs);
    auto it = layer.config.find("batch_input_shape");
    if (it == layer.config.end() || !it->is_array()) return;
    Shape declared;
    for (std::size_t i = 1; i < it->size(); ++i) {
      if ((*it)[i].is_null()) return;
      declared.push_back((*it)[i].get<std::size_t>());
    }
    if (declared != s) {
      throw Error(ErrorCode::ShapeMismatch, layer.name + " declares input " +
                                                shape_to_string(declared) + ", metadata implies " +
                                                shape_to_string(s));
    }
  }

  std::size_t compile_layer(const LayerSpec& layer, const std::vector<std::size_t>& inputs,
                            const std::vector<std::string>& scope) {
    const auto& cls = layer.class_name;
    PlanNode n;
    n.name = layer.name;
    n.class_name = cls;

    if (cls == "InputLayer") {
      check_input_layer(layer, inputs);
      return inputs.front();
    }
    if (cls == "Dropout" || cls == "SpatialDropout2D") {
      single_input(layer, inputs);
      return inputs.front();
    }

    if (cls == "Conv2D" || cls == "DepthwiseConv2D") {
      const Shape& in = image_input(layer, inputs);
      require_channels_last(layer);
      require_unit_dilation(layer);
      const bool depthwise = cls == "DepthwiseConv2D";
      if (!depthwise && config_or<int>(layer, "groups", 1) != 1) {
        throw Error(ErrorCode::UnsupportedLayer, "Conv2D with groups");
      }
      ops::ConvParams p;
      p.strides = config_pair(layer, "strides", {1, 1});
      p.padding = parse_padding(layer);
      p.kernel = bind(layer, scope, depthwise ? "depthwise_kernel" : "kernel");
      n.parameter_count += p.kernel.size();
      if (p.kernel.rank() != 4 || p.kernel.dim(2) != in[2]) {
        throw Error(ErrorCode::ShapeMismatch, layer.name + " kernel " +
                                                  shape_to_string(p.kernel.shape()) +
                                                  " for input " + shape_to_string(in));
      }
      const auto ks = config_pair(layer, "kernel_size", {p.kernel.dim(0), p.kernel.dim(1)});
      if (ks.h != p.kernel.dim(0) || ks.w != p.kernel.dim(1)) {
        throw Error(ErrorCode::ShapeMismatch, layer.name + " kernel_size disagrees with weights");
      }
      const std::size_t out_c = depthwise ? in[2] * p.kernel.dim(3) : p.kernel.dim(3);
      if (depthwise) {
        const auto mult = config_or<std::size_t>(layer, "depth_multiplier", p.kernel.dim(3));
        if (mult != p.kernel.dim(3)) {
          throw Error(ErrorCode::ShapeMismatch, layer.name + " depth_multiplier disagrees");
        }
      } else if (config_or<std::size_t>(layer, "filters", out_c) != out_c) {
        throw Error(ErrorCode::ShapeMismatch, layer.name + " filters disagrees with weights");
      }
      if (config_or<bool>(layer, "use_bias", true)) {
        p.bias = bind(layer, scope, "bias");
        n.parameter_count += p.bias->size();
        if (p.bias->size() != out_c) {
          throw Error(ErrorCode::ShapeMismatch, layer.name + " bias length");
        }
      }
      n.activation = parse_activation(layer);
      const auto gy = ops::axis_geometry(in[0], p.kernel.dim(0), p.strides.h, p.padding);
      const auto gx = ops::axis_geometry(in[1], p.kernel.dim(1), p.strides.w, p.padding);
      Shape out{gy.out, gx.out, out_c};
      if (depthwise) {
        n.op = node::Depthwise{std::move(p)};
      } else {
        n.op = node::Conv{std::move(p)};
      }
      return emit(std::move(n), inputs, std::move(out));
    }

    if (cls == "BatchNormalization") {
      const Shape& in = single_input(layer, inputs);
      if (in.empty()) throw Error(ErrorCode::ShapeMismatch, layer.name + " on a scalar");
      const auto axis = layer.config.value("axis", json(-1));
      const auto axis_v = axis.is_array() ? axis.at(0).get<long long>() : axis.get<long long>();
      if (axis_v != -1 && axis_v != static_cast<long long>(in.size())) {
        throw Error(ErrorCode::UnsupportedLayer, "BatchNormalization over a non-channel axis");
      }
      const std::size_t c = in.back();
      node::BatchNorm bn;
      bn.epsilon = config_or<float>(layer, "epsilon", 1e-3f);
      bn.gamma = config_or<bool>(layer, "scale", true) ? bind(layer, scope, "gamma")
                                                        : NdArray({c}, 1.0f);
      bn.beta = config_or<bool>(layer, "center", true) ? bind(layer, scope, "beta")
                                                        : NdArray({c}, 0.0f);
      bn.mean = bind(layer, scope, "moving_mean");
      bn.variance = bind(layer, scope, "moving_variance");
      for (const NdArray* v : {&bn.gamma, &bn.beta, &bn.mean, &bn.variance}) {
        if (v->size() != c) throw Error(ErrorCode::ShapeMismatch, layer.name + " parameter length");
      }
      n.parameter_count = bn.gamma.size() * static_cast<std::size_t>(
                              2 + config_or<bool>(layer, "scale", true) +
                              config_or<bool>(layer, "center", true));
      n.op = std::move(bn);
      return emit(std::move(n), inputs, in);
    }

    if (cls == "ReLU") {
      const Shape& in = single_input(layer, inputs);
      if (config_or<float>(layer, "negative_slope", 0.0f) != 0.0f ||
          config_or<float>(layer, "threshold", 0.0f) != 0.0f) {
        throw Error(ErrorCode::UnsupportedLayer, "ReLU with negative_slope or threshold");
      }
      node::Relu relu;
      if (auto it = layer.config.find("max_value"); it != layer.config.end() && !it->is_null()) {
        relu.max_value = it->get<float>();
      }
      n.op = relu;
      return emit(std::move(n), inputs, in);
    }

    if (cls == "Activation") {
      const Shape& in = single_input(layer, inputs);
      n.activation = parse_activation(layer);
      if (n.activation == ops::Activation::Linear) return inputs.front();
      n.op = node::Activation{};
      return emit(std::move(n), inputs, in);
    }

    if (cls == "ZeroPadding2D") {
      const Shape& in = image_input(layer, inputs);
      require_channels_last(layer);
      const auto pads = parse_zero_padding(layer);
      Shape out{in[0] + pads.top + pads.bottom, in[1] + pads.left + pads.right, in[2]};
      n.op = node::ZeroPad{pads};
      return emit(std::move(n), inputs, std::move(out));
    }

    if (cls == "Add") {
      if (inputs.size() < 2) throw Error(ErrorCode::ShapeMismatch, layer.name + " needs 2+ inputs");
      for (auto slot : inputs) {
        if (shapes_[slot] != shapes_[inputs.front()]) {
          throw Error(ErrorCode::ShapeMismatch, layer.name + " operand shapes differ");
        }
      }
      n.op = node::Add{};
      return emit(std::move(n), inputs, shapes_[inputs.front()]);
    }

    if (cls == "MaxPooling2D" || cls == "AveragePooling2D") {
      const Shape& in = image_input(layer, inputs);
      require_channels_last(layer);
      node::Pool pool;
      pool.kind = cls == "MaxPooling2D" ? ops::PoolKind::Max : ops::PoolKind::Average;
      pool.window = config_pair(layer, "pool_size", {2, 2});
      pool.strides = config_pair(layer, "strides", pool.window);
      pool.padding = parse_padding(layer);
      const auto gy = ops::axis_geometry(in[0], pool.window.h, pool.strides.h, pool.padding);
      const auto gx = ops::axis_geometry(in[1], pool.window.w, pool.strides.w, pool.padding);
      n.op = pool;
      return emit(std::move(n), inputs, {gy.out, gx.out, in[2]});
    }

    if (cls == "GlobalAveragePooling2D") {
      const Shape& in = image_input(layer, inputs);
      require_channels_last(layer);
      node::Pool pool;
      pool.kind = ops::PoolKind::GlobalAverage;
      pool.keep_dims = config_or<bool>(layer, "keepdims", false);
      n.op = pool;
      return emit(std::move(n), inputs, pool.keep_dims ? Shape{1, 1, in[2]} : Shape{in[2]});
    }

    if (cls == "Flatten") {
      const Shape& in = single_input(layer, inputs);
      n.op = node::Flatten{};
      return emit(std::move(n), inputs, {element_count(in)});
    }

    if (cls == "Reshape") {
      const Shape& in = single_input(layer, inputs);
      Shape target;
      std::optional<std::size_t> wildcard;
      for (const auto& d : layer.config.at("target_shape")) {
        if (d.get<long long>() == -1) {
          if (wildcard) throw Error(ErrorCode::InvalidValue, layer.name + " has two -1 dims");
          wildcard = target.size();
          target.push_back(1);
        } else {
          target.push_back(d.get<std::size_t>());
        }
      }
      if (wildcard) {
        const auto known = element_count(target);
        if (known == 0 || element_count(in) % known) {
          throw Error(ErrorCode::ShapeMismatch, layer.name + " cannot infer -1");
        }
        target[*wildcard] = element_count(in) / known;
      }
      if (element_count(target) != element_count(in) || target.size() > NdArray::kMaxRank) {
        throw Error(ErrorCode::ShapeMismatch, layer.name + " reshape " + shape_to_string(in) +
                                                  " to " + shape_to_string(target));
      }
      n.op = node::Reshape{target};
      return emit(std::move(n), inputs, target);
    }

    if (cls == "Dense") {
      const Shape& in = single_input(layer, inputs);
      node::Dense d;
      d.kernel = bind(layer, scope, "kernel");
      n.parameter_count += d.kernel.size();
      if (d.kernel.rank() != 2 || in.empty() || in.back() != d.kernel.dim(0)) {
        throw Error(ErrorCode::ShapeMismatch, layer.name + " kernel " +
                                                  shape_to_string(d.kernel.shape()) +
                                                  " for input " + shape_to_string(in));
      }
      const std::size_t units = d.kernel.dim(1);
      if (config_or<std::size_t>(layer, "units", units) != units) {
        throw Error(ErrorCode::ShapeMismatch, layer.name + " units disagrees with weights");
      }
      if (config_or<bool>(layer, "use_bias", true)) {
        d.bias = bind(layer, scope, "bias");
        n.parameter_count += d.bias->size();
        if (d.bias->size() != units) throw Error(ErrorCode::ShapeMismatch, layer.name + " bias");
      }
      n.activation = parse_activation(layer);
      Shape out = in;
      out.back() = units;
      n.op = std::move(d);
      return emit(std::move(n), inputs, std::move(out));
    }

    throw Error(ErrorCode::UnsupportedLayer, cls);
  }

  const ModelBundle& bundle_;
  ExecutionPlan plan_;
  std::vector<Shape> shapes_;
  std::set<std::string> consumed_;
};

std::string PlanNode::describe() const {
  auto with_act = [this](std::string s) {
    return activation == ops::Activation::Linear ? s : s + ", " + activation_name(activation);
  };
  auto pad_name = [](ops::Padding p) { return p == ops::Padding::Same ? "same" : "valid"; };
  return std::visit(
      overloaded{
          [&](const node::Conv& c) {
            const auto& k = c.params.kernel;
            return "Conv2D(" + with_act(std::to_string(k.dim(3)) + ", " + std::to_string(k.dim(0)) +
                                        "x" + std::to_string(k.dim(1)) + "/" +
                                        std::to_string(c.params.strides.h) + ", " +
                                        pad_name(c.params.padding)) +
                   ")";
          },
          [&](const node::Depthwise& c) {
            const auto& k = c.params.kernel;
            return "DepthwiseConv2D(" +
                   with_act("x" + std::to_string(k.dim(3)) + ", " + std::to_string(k.dim(0)) +
                            "x" + std::to_string(k.dim(1)) + "/" +
                            std::to_string(c.params.strides.h) + ", " + pad_name(c.params.padding)) +
                   ")";
          },
          [&](const node::BatchNorm&) { return std::string("BatchNormalization"); },
          [&](const node::Relu& r) {
            if (!r.max_value) return std::string("ReLU");
            std::ostringstream s;
            s << "ReLU(max=" << *r.max_value << ")";
            return s.str();
          },
          [&](const node::Activation&) {
            return "Activation(" + activation_name(activation) + ")";
          },
          [&](const node::ZeroPad& z) {
            return "ZeroPadding2D(" + std::to_string(z.pads.top) + "," +
                   std::to_string(z.pads.bottom) + "," + std::to_string(z.pads.left) + "," +
                   std::to_string(z.pads.right) + ")";
          },
          [&](const node::Add&) { return std::string("Add"); },
          [&](const node::Pool& p) {
            if (p.kind == ops::PoolKind::GlobalAverage) return std::string("GlobalAveragePooling2D");
            return std::string(p.kind == ops::PoolKind::Max ? "MaxPooling2D(" : "AveragePooling2D(") +
                   std::to_string(p.window.h) + "x" + std::to_string(p.window.w) + "/" +
                   std::to_string(p.strides.h) + ", " + pad_name(p.padding) + ")";
          },
          [&](const node::Flatten&) { return std::string("Flatten"); },
          [&](const node::Reshape& r) { return "Reshape(" + shape_to_string(r.target) + ")"; },
          [&](const node::Dense& d) {
            return "Dense(" + with_act(std::to_string(d.kernel.dim(1))) + ")";
          },
      },
      op);
}

std::size_t ExecutionPlan::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& node : nodes_) n += node.parameter_count;
  return n;
}

NdArray ExecutionPlan::run(const NdArray& input) const {
  const Shape expected = input_shape();
  const bool batched = input.rank() == 4 && input.dim(0) == 1 &&
                       Shape(input.shape().begin() + 1, input.shape().end()) == expected;
  if (input.shape() != expected && !batched) {
    throw Error(ErrorCode::ShapeMismatch, "plan expects input " + shape_to_string(expected) +
                                              ", got " + shape_to_string(input.shape()));
  }

  std::vector<NdArray> slots(nodes_.size() + 1);
  slots[0] = batched ? ops::reshape(input, expected) : input;

  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const PlanNode& n = nodes_[k];
    const NdArray& x = slots[n.inputs.front()];
    NdArray y = std::visit(
        overloaded{
            [&](const node::Conv& c) { return ops::conv2d(x, c.params); },
            [&](const node::Depthwise& c) { return ops::depthwise_conv2d(x, c.params); },
            [&](const node::BatchNorm& b) {
              return ops::batch_norm(x, b.gamma, b.beta, b.mean, b.variance, b.epsilon);
            },
            [&](const node::Relu& r) { return ops::relu(x, r.max_value); },
            [&](const node::Activation&) { return x; },
            [&](const node::ZeroPad& z) { return ops::zero_pad2d(x, z.pads); },
            [&](const node::Add&) {
              NdArray sum = x;
              for (std::size_t i = 1; i < n.inputs.size(); ++i) {
                sum = ops::add(sum, slots[n.inputs[i]]);
              }
              return sum;
            },
            [&](const node::Pool& p) {
              auto out = ops::pool2d(x, p.kind, p.window, p.strides, p.padding);
              return p.keep_dims ? ops::reshape(out, n.output_shape) : out;
            },
            [&](const node::Flatten&) { return ops::flatten(x); },
            [&](const node::Reshape& r) { return ops::reshape(x, r.target); },
            [&](const node::Dense& d) { return dense_rows(x, d, ops::Activation::Linear); },
        },
        n.op);
    if (n.activation != ops::Activation::Linear) y = apply_activation(y, n.activation);
    slots[k + 1] = std::move(y);

    for (auto slot : n.inputs) {
      if (slot != output_slot_ && last_use_[slot] == k) slots[slot] = NdArray();
    }
  }
  return ops::flatten(slots[output_slot_]);
}

ExecutionPlan build_plan(const ModelBundle& bundle) try {
  return PlanBuilder(bundle).build();
} catch (const json::exception& e) {
  throw Error(ErrorCode::MalformedDocument, std::string("layer config: ") + e.what());
}

std::string summarize(const ExecutionPlan& plan) {
  std::ostringstream out;
  out << "input " << shape_to_string(plan.input_shape()) << "\n";
  out << std::left << std::setw(4) << "#" << std::setw(28) << "layer" << std::setw(36) << "op"
      << std::setw(16) << "output"
      << "params\n";
  std::vector<std::string> ops_line;
  for (std::size_t i = 0; i < plan.nodes().size(); ++i) {
    const auto& n = plan.nodes()[i];
    const auto what = n.describe();
    out << std::left << std::setw(4) << i << std::setw(28) << n.name << std::setw(36) << what
        << std::setw(16) << shape_to_string(n.output_shape) << n.parameter_count << "\n";
    ops_line.push_back(what);
  }
  for (const auto& w : plan.warnings()) out << "warning: " << w << "\n";
  out << join(ops_line, " → ") << "; params=" << plan.parameter_count() << "\n";
  return out.str();
}

}  // namespace tminfer
