#pragma once

#include "windq/allocators.hpp"
#include "windq/budget.hpp"
#include "windq/calibration.hpp"
#include "windq/common.hpp"
#include "windq/engine.hpp"
#include "windq/environment.hpp"
#include "windq/oracle.hpp"
#include "windq/plan.hpp"
#include "windq/policy.hpp"
#include "windq/proxy_model.hpp"
#include "windq/quantizers.hpp"
#include "windq/run.hpp"
#include "windq/tensor_store.hpp"
