#pragma once

// Maps command-line options onto JSON pointers of a run configuration.
// Only options that were actually given override the configuration, so a
// flag always wins over --config and an absent flag never clobbers it.

#include <CLI11.hpp>
#include <json.hpp>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace phaserec::cli {

class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* option(const std::string& flags, const std::string& pointer,
                      const std::string& help, double divisor = 1.0) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(flags, *value, help);
    appliers_.push_back([opt, value, pointer, divisor](nlohmann::json& j) {
      if (opt->count() == 0) return;
      j[nlohmann::json::json_pointer(pointer)] = scaled(*value, divisor);
    });
    return opt;
  }

  /// List option split on commas.
  template <typename T>
  CLI::Option* list(const std::string& flags, const std::string& pointer,
                    const std::string& help, double divisor = 1.0) {
    return option<std::vector<T>>(flags, pointer, help, divisor)->delimiter(',');
  }

  /// Boolean flag; "--a,!--no-a" style negation is supported.
  CLI::Option* flag(const std::string& flags, const std::string& pointer,
                    const std::string& help) {
    auto value = std::make_shared<bool>(false);
    auto* opt = app_->add_flag(flags, *value, help);
    appliers_.push_back([opt, value, pointer](nlohmann::json& j) {
      if (opt->count() == 0) return;
      j[nlohmann::json::json_pointer(pointer)] = *value;
    });
    return opt;
  }

  /// Option whose value is transformed before it is stored.
  template <typename T>
  CLI::Option* mapped(const std::string& flags, const std::string& help,
                      std::function<void(nlohmann::json&, const T&)> apply) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(flags, *value, help);
    appliers_.push_back([opt, value, apply](nlohmann::json& j) {
      if (opt->count() > 0) apply(j, *value);
    });
    return opt;
  }

  void apply(nlohmann::json& j) const {
    for (const auto& a : appliers_) a(j);
  }

  CLI::App* app() const { return app_; }

 private:
  template <typename T>
  static nlohmann::json scaled(const T& v, double divisor) {
    if constexpr (std::is_same_v<T, double>) {
      return v / divisor;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      std::vector<double> out;
      for (double x : v) out.push_back(x / divisor);
      return out;
    } else {
      return v;
    }
  }

  CLI::App* app_;
  std::vector<std::function<void(nlohmann::json&)>> appliers_;
};

}  // namespace phaserec::cli
