#pragma once

#include "facial_basis/behavior_features.hpp"
#include "facial_basis/classifier.hpp"
#include "facial_basis/csv.hpp"
#include "facial_basis/dict_learn.hpp"
#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"
#include "facial_basis/parallel.hpp"
#include "facial_basis/serialization.hpp"
#include "facial_basis/sparse_coder.hpp"
#include "facial_basis/synth_oracle.hpp"
