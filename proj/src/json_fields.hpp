#pragma once

#include "smlm/io.hpp"

#include <set>
#include <string>
#include <type_traits>
#include <vector>

namespace smlm::detail {

/// Strict view of a JSON object: typed optional/required reads, and a final
/// check that every key present was consumed.
class Fields
{
public:
  Fields(const Json& obj, std::string where)
    : obj_(obj), where_(std::move(where))
  {
    if (!obj_.is_object())
      fail("expected a JSON object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const Json& raw(const std::string& key)
  {
    if (!obj_.contains(key))
      fail("missing required key '" + key + "'");
    used_.insert(key);
    return obj_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out)
  {
    if (!obj_.contains(key))
      return;
    used_.insert(key);
    out = convert<T>(obj_.at(key), key);
  }

  template <typename T>
  T require(const std::string& key)
  {
    return convert<T>(raw(key), key);
  }

  void finish() const
  {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!used_.count(it.key()))
        fail("unknown key '" + it.key() + "'");
  }

  [[noreturn]] void fail(const std::string& what) const { throw IoError(IoErrc::BadConfig, where_ + ": " + what); }

  const std::string& where() const { return where_; }

private:
  template <typename T>
  T convert(const Json& v, const std::string& key) const
  {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean())
        fail("'" + key + "' must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer())
        fail("'" + key + "' must be an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number())
        fail("'" + key + "' must be a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string())
        fail("'" + key + "' must be a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array())
        fail("'" + key + "' must be an array of numbers");
      std::vector<double> out;
      for (const auto& e : v) {
        if (!e.is_number())
          fail("'" + key + "' must be an array of numbers");
        out.push_back(e.get<double>());
      }
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

  const Json& obj_;
  std::string where_;
  std::set<std::string> used_;
};

} // namespace smlm::detail
