#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace twachain {

/// Base exception. `code` is a stable machine-readable identifier
/// (e.g. "NonFiniteField"); `stage` names the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, std::string code, const std::string& message, std::string context = {})
      : std::runtime_error(message), stage_(std::move(stage)), code_(std::move(code)),
        context_(std::move(context)) {}

  const std::string& stage() const { return stage_; }
  const std::string& code() const { return code_; }
  const std::string& context() const { return context_; }

 private:
  std::string stage_;
  std::string code_;
  std::string context_;
};

}  // namespace twachain
