from rest_framework import serializers


class EvaluationConfigSerializer(serializers.Serializer):
    k = serializers.IntegerField(min_value=1)
    k_max = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0)
    max_instances = serializers.IntegerField(min_value=0)
