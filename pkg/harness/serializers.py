import math

from rest_framework import serializers


def flatten_errors(detail, prefix=''):
    """Render nested DRF error details as ``field.sub: message`` fragments."""
    if isinstance(detail, dict):
        parts = []
        for key, value in detail.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            parts.append(flatten_errors(value, name))
        return '; '.join(part for part in parts if part)
    if isinstance(detail, list):
        if all(isinstance(item, str) for item in detail):
            message = ' '.join(str(item) for item in detail)
            return f"{prefix}: {message}" if prefix else message
        parts = [flatten_errors(item, f"{prefix}[{index}]") for index, item in enumerate(detail) if item]
        return '; '.join(part for part in parts if part)
    return f"{prefix}: {detail}" if prefix else str(detail)


class LogWeightField(serializers.Field):
    """A float that may also be -Infinity (the log-weight of a failed particle)."""

    default_error_messages = {
        'invalid': 'A finite number or -Infinity is required.',
    }

    def to_internal_value(self, data):
        if isinstance(data, bool):
            self.fail('invalid')
        try:
            value = float(data)
        except (TypeError, ValueError):
            self.fail('invalid')
        if math.isnan(value) or value == math.inf:
            self.fail('invalid')
        return value

    def to_representation(self, value):
        return float(value)


class EngineConfigSerializer(serializers.Serializer):
    """Validates the merged settings, config-file and command-line options."""

    particles = serializers.IntegerField(min_value=1)
    alpha = serializers.FloatField()
    blocks = serializers.IntegerField(min_value=1)
    test_blocks = serializers.IntegerField(min_value=0)
    minibatch = serializers.IntegerField(min_value=0)
    threads = serializers.IntegerField(min_value=1)
    resample_threshold = serializers.FloatField(min_value=0.0, max_value=1.0)
    max_iters = serializers.IntegerField(min_value=1)
    grad_tol = serializers.FloatField()
    seed = serializers.IntegerField(min_value=0)
    ordering = serializers.ChoiceField(choices=['shuffled', 'time'], default='shuffled')
    split = serializers.ChoiceField(choices=['random', 'tail'], default='random')
    test_fraction = serializers.FloatField(default=0.1)
    split_fraction = serializers.FloatField(default=0.5)
    normalize = serializers.BooleanField(default=False)
    allow_new_arm = serializers.BooleanField(default=False)
    refine = serializers.BooleanField(default=False)
    merge_tol = serializers.FloatField(min_value=0.0, default=0.05)
    baseline = serializers.BooleanField(default=False)
    sort = serializers.BooleanField(default=False)

    def validate_alpha(self, value):
        if not value > 0:
            raise serializers.ValidationError("alpha must be positive.")
        return value

    def validate_grad_tol(self, value):
        if not value > 0:
            raise serializers.ValidationError("grad_tol must be positive.")
        return value

    def validate_test_fraction(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("test_fraction must lie strictly between 0 and 1.")
        return value

    def validate_split_fraction(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("split_fraction must lie strictly between 0 and 1.")
        return value

    def validate(self, attrs):
        if attrs.get('baseline'):
            attrs['particles'] = 1
        return attrs


class CommaFloatListField(serializers.ListField):
    """A list of floats, also accepted as comma-separated text (``3,6.5``)."""

    child = serializers.FloatField()

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [part.strip() for part in data.split(',') if part.strip()]
        return super().to_internal_value(data)


class SynthOptionsSerializer(serializers.Serializer):
    n_train = serializers.IntegerField(min_value=1, default=1000)
    n_test = serializers.IntegerField(min_value=1, default=100)
    noise_sd = serializers.FloatField(min_value=0.0, default=1.0)
    seed = serializers.IntegerField(min_value=0, default=0)
    low = serializers.FloatField(default=0.0)
    high = serializers.FloatField(default=10.0)
    breakpoints = CommaFloatListField(default=[5.0])
    frequencies = CommaFloatListField(allow_empty=False, default=[0.6, 4.0])


class SavedModelOptionsSerializer(serializers.Serializer):
    """Options of the commands that read a saved model; all are paths or labels."""

    model_in = serializers.CharField(required=False)
    test = serializers.CharField(required=False)
    out_dir = serializers.CharField(required=False)
    arms_out = serializers.CharField(required=False)
    run_id = serializers.CharField(default='harvest')


def _float_list(**kwargs):
    return serializers.ListField(child=serializers.FloatField(), **kwargs)


def _theta_field():
    return serializers.ListField(child=serializers.FloatField(), min_length=3, max_length=3)


class FileHeaderSerializer(serializers.Serializer):
    format = serializers.CharField()
    version = serializers.IntegerField()
    checksum = serializers.RegexField(r'^[0-9a-f]{64}$')
    sections = serializers.ListField(child=serializers.CharField(), allow_empty=False)


class EngineSectionSerializer(serializers.Serializer):
    particles = serializers.IntegerField(min_value=1)
    alpha = serializers.FloatField()
    minibatch = serializers.IntegerField(min_value=0)
    resample_threshold = serializers.FloatField(min_value=0.0, max_value=1.0)
    threads = serializers.IntegerField(min_value=1)
    max_iters = serializers.IntegerField(min_value=1)
    grad_tol = serializers.FloatField()
    bounds = serializers.ListField(child=_float_list(min_length=2, max_length=2), min_length=3, max_length=3)


class PriorSerializer(serializers.Serializer):
    mu0 = _float_list(allow_empty=False)
    lam = serializers.FloatField()
    Psi = serializers.ListField(child=_float_list())
    nu = serializers.FloatField()

    def validate(self, attrs):
        dim = len(attrs['mu0'])
        if len(attrs['Psi']) != dim or any(len(row) != dim for row in attrs['Psi']):
            raise serializers.ValidationError({"Psi": f"Psi must be {dim}x{dim}."})
        return attrs


class WarmStartSerializer(serializers.Serializer):
    allow_new_arm = serializers.BooleanField()
    refine = serializers.BooleanField()
    run_id = serializers.CharField()
    merge_tol = serializers.FloatField(min_value=0.0, default=0.05)


class EnsembleSectionSerializer(serializers.Serializer):
    master_seed = serializers.IntegerField(min_value=0)
    step_counter = serializers.IntegerField(min_value=1)
    prior = PriorSerializer()
    default_theta = _theta_field()
    metadata = serializers.DictField(required=False, default=dict)
    warm_start = WarmStartSerializer(allow_null=True, required=False, default=None)


class BatchSerializer(serializers.Serializer):
    inputs = serializers.ListField(child=_float_list(allow_empty=False))
    outputs = _float_list()

    def validate(self, attrs):
        if len(attrs['inputs']) != len(attrs['outputs']):
            raise serializers.ValidationError("inputs and outputs differ in length.")
        if len({len(row) for row in attrs['inputs']}) > 1:
            raise serializers.ValidationError("inputs have rows of different lengths.")
        return attrs


class DataSectionSerializer(serializers.Serializer):
    batches = BatchSerializer(many=True, allow_empty=False)


class ExpertSerializer(serializers.Serializer):
    cluster_id = serializers.IntegerField(min_value=0)
    theta = _theta_field()
    cached_lml = serializers.FloatField()
    dirty = serializers.BooleanField()
    fitted = serializers.BooleanField()
    subsample = serializers.ListField(
        child=serializers.IntegerField(min_value=0), allow_null=True, required=False, default=None,
    )


class ParticleSerializer(serializers.Serializer):
    log_weight = LogWeightField()
    lml_total = serializers.FloatField()
    next_cluster_id = serializers.IntegerField(min_value=0)
    assignment_log = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=3, max_length=3),
    )
    experts = ExpertSerializer(many=True)

    def validate(self, attrs):
        logged = {entry[2] for entry in attrs['assignment_log']}
        stored = {expert['cluster_id'] for expert in attrs['experts']}
        if logged != stored:
            raise serializers.ValidationError("experts do not match the clusters in assignment_log.")
        if stored and max(stored) >= attrs['next_cluster_id']:
            raise serializers.ValidationError("next_cluster_id must exceed every cluster id.")
        return attrs


class ParticlesSectionSerializer(serializers.Serializer):
    particles = ParticleSerializer(many=True, allow_empty=False)


class ArmSerializer(serializers.Serializer):
    theta = _theta_field()
    provenance = serializers.ListField(min_length=3, max_length=3)
    harvest_lml = serializers.FloatField()

    def validate_provenance(self, value):
        run_id, particle, cluster = value
        if not isinstance(run_id, str) or isinstance(particle, bool) or isinstance(cluster, bool):
            raise serializers.ValidationError("provenance must be [run_id, particle index, cluster id].")
        if not isinstance(particle, int) or not isinstance(cluster, int):
            raise serializers.ValidationError("provenance must be [run_id, particle index, cluster id].")
        return value


class ArmPoolSerializer(serializers.Serializer):
    version = serializers.IntegerField(min_value=0)
    arms = ArmSerializer(many=True)


SECTION_SERIALIZERS = {
    'config': EngineSectionSerializer,
    'ensemble': EnsembleSectionSerializer,
    'data': DataSectionSerializer,
    'particles': ParticlesSectionSerializer,
    'arm_pool': ArmPoolSerializer,
    'pool': ArmPoolSerializer,
}
